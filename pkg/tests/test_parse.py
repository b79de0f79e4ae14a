import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loglab.errors import ParseError
from loglab.parse import (
    WILDCARD,
    Template,
    TemplateMiner,
    TokenSequence,
    build_context,
    extract_attributes,
    mine_templates,
    normalize,
    parse_corpus,
    read_parsed_corpus,
    read_template_table,
    tokenize,
    write_parsed_corpus,
    write_template_table,
)

from tests.conftest import make_messages


@pytest.mark.unit
def test_tokenize():
    assert tokenize("Start mail service at node wally001").tokens == (
        "Start",
        "mail",
        "service",
        "at",
        "node",
        "wally001",
    )
    assert tokenize("ciod: failed to read  /dev/sda1, retry 3.").tokens == (
        "ciod",
        "failed",
        "to",
        "read",
        "dev",
        "sda1",
        "retry",
        "3",
    )
    assert tokenize("").tokens == ()
    assert tokenize("x", origin=4).origin == 4


@pytest.mark.unit
@pytest.mark.parametrize(
    "token,expected",
    [
        ("wally001", "wally001"),
        ("0x1F", "[HEX]"),
        ("0xdeadbeef", "[HEX]"),
        ("deadbeef", "[HEX]"),
        ("00ff", "[HEX]"),
        ("abc", "abc"),
        ("12345", "[NUM]"),
        ("10", "[NUM]"),
        ("7", "7"),
        ("error", "error"),
    ],
)
def test_normalize(token, expected):
    assert normalize(TokenSequence((token,))).tokens == (expected,)


@pytest.mark.unit
def test_template_example(sample_lines):
    parsed = parse_corpus(sample_lines)
    assert len(parsed.templates) == 1
    assert parsed.templates[0].render() == "Start <*> service at node <*>"
    assert parsed.template_ids == [0, 0]
    assert parsed.attributes[0].values == ("mail", "wally001")
    assert parsed.attributes[1].values == ("printer", "wally005")
    assert [a.origin for a in parsed.attributes] == [0, 1]


@pytest.mark.unit
def test_miner_keeps_different_events_apart():
    lines = [
        "Start mail service at node wally001",
        "Receive package alpha from wally002",
        "Start dns service at node wally003",
        "Send package beta to wally001",
        "Receive package gamma from wally005",
        "instruction cache parity error corrected",
    ]
    sequences = [normalize(tokenize(line, i)) for i, line in enumerate(lines)]
    templates, ids = mine_templates(sequences)
    assert [t.render() for t in templates] == [
        "Start <*> service at node <*>",
        "Receive package <*> from <*>",
        "Send package beta to wally001",
        "instruction cache parity error corrected",
    ]
    # ids are dense and follow the first appearance
    assert ids == [0, 1, 0, 2, 1, 3]


@pytest.mark.unit
def test_miner_threshold():
    sequences = [tokenize("a b c d"), tokenize("a x y z")]
    # 1 literal position in common out of 4
    assert len(mine_templates(sequences, TemplateMiner(similarity_threshold=0.5))[0]) == 2
    assert len(mine_templates(sequences, TemplateMiner(similarity_threshold=0.25))[0]) == 1


@pytest.mark.unit
def test_miner_digit_tokens_and_overflow():
    # first tokens holding digits share the wildcard branch
    sequences = [tokenize("node1 is up"), tokenize("node2 is up")]
    templates, _ = mine_templates(sequences)
    assert [t.render() for t in templates] == ["<*> is up"]

    # with 2 children per node, every first token after 'alpha' goes under the wildcard key
    miner = TemplateMiner(max_children=2)
    templates, ids = mine_templates([tokenize(f"{w} happened now") for w in ["alpha", "beta", "gamma", "delta"]], miner)
    assert [t.render() for t in templates] == ["alpha happened now", "<*> happened now"]
    assert ids == [0, 1, 1, 1]
    assert miner.stats["num_template_changes"] == 1
    assert miner.stats["num_clusters"] == 2


@pytest.mark.unit
def test_miner_rejects_bad_parameters():
    with pytest.raises(ValueError):
        TemplateMiner(similarity_threshold=0.0)
    with pytest.raises(ValueError):
        TemplateMiner(depth=2)
    with pytest.raises(ParseError):
        mine_templates([])


@pytest.mark.unit
def test_extract_attributes_and_fill():
    template = Template(3, ("Start", WILDCARD, "service", "at", "node", WILDCARD))
    seq = tokenize("Start mail service at node wally001", origin=9)
    attrs = extract_attributes(seq, template)
    assert attrs.origin == 9
    assert attrs.values == ("mail", "wally001")
    assert template.fill(attrs.values) == seq.tokens

    with pytest.raises(ParseError):
        extract_attributes(tokenize("Stop mail service at node wally001"), template)
    with pytest.raises(ParseError):
        template.fill(["just one"])

    no_slots = Template(0, ("all", "literal"))
    assert extract_attributes(tokenize("all literal"), no_slots).values == ()


@pytest.mark.unit
def test_context_example():
    # every line has its own template id, so ids and positions coincide
    ids = list(range(20))
    contexts = build_context(ids, 2, 1)
    assert contexts[10].neighbor_ids == frozenset({8, 9, 11})
    assert contexts[10].origin == 10

    # truncated at the corpus edges
    assert contexts[0].neighbor_ids == frozenset({1})
    assert contexts[19].neighbor_ids == frozenset({17, 18})


@pytest.mark.unit
def test_context_is_a_set():
    contexts = build_context([5, 5, 7, 5], 3, 0)
    assert contexts[3].neighbor_ids == frozenset({5, 7})
    assert contexts[0].neighbor_ids == frozenset()


@pytest.mark.unit
@pytest.mark.parametrize("a,b", [(0, 0), (-1, 2), (1, -1)])
def test_context_bad_bounds(a, b):
    with pytest.raises(ValueError):
        build_context([1, 2, 3], a, b)


@pytest.mark.unit
def test_exports(tmpdir, sample_lines):
    parsed = parse_corpus(sample_lines)

    table = tmpdir.join("templates.tsv")
    write_template_table(parsed.templates, str(table), "# provenance")
    assert table.read().splitlines() == ["# provenance", "0\tStart <*> service at node <*>"]
    assert read_template_table(str(table)) == parsed.templates

    rows = tmpdir.join("parsed.csv")
    write_parsed_corpus(parsed, str(rows), "# provenance")
    assert read_parsed_corpus(str(rows)) == [(0, 0, ("mail", "wally001")), (1, 0, ("printer", "wally005"))]


words = st.sampled_from(["alpha", "beta", "gamma", "node", "up", "down", "1234", "x7", "0xff", "disk"])


@pytest.mark.unit
@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(words, min_size=1, max_size=6).map(" ".join), min_size=1, max_size=40))
def test_every_line_matches_its_template(contents):
    messages = make_messages([(i, c, "N") for i, c in enumerate(contents)])
    parsed = parse_corpus(messages)

    assert len(parsed.template_ids) == len(messages)
    assert sorted(set(parsed.template_ids)) == list(range(len(parsed.templates)))
    for pos, seq in enumerate(parsed.sequences):
        template = parsed.template_of(pos)
        assert template.matches(seq)
        assert template.fill(parsed.attributes[pos].values) == seq.tokens
    # no two templates share a skeleton
    assert len({t.skeleton for t in parsed.templates}) == len(parsed.templates)


@pytest.mark.unit
@settings(max_examples=100, deadline=None)
@given(st.lists(st.text(alphabet="0123456789abcdefxyzXF", min_size=1, max_size=12), max_size=10))
def test_normalize_is_idempotent(tokens):
    once = normalize(TokenSequence(tuple(tokens)))
    assert normalize(once) == once


@pytest.mark.unit
@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 6), max_size=30), st.integers(0, 4), st.integers(0, 4))
def test_context_of_the_reversed_corpus(ids, a, b):
    if a + b == 0:
        b = 1
    forward = build_context(ids, a, b)
    backward = build_context(list(reversed(ids)), b, a)
    assert [c.neighbor_ids for c in forward] == [c.neighbor_ids for c in reversed(backward)]
