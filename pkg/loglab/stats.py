#!/usr/bin/env python3

import time

#
# Created: Oct 2026
# License: Apache license
#

# =======================================================================================================
# StatsCollector
# =======================================================================================================


class StatsCollector:
    """
    Collects the pipeline stages (objects exposing print_stats()) used by one command and prints
    their counters after the command ran.
    """

    def __init__(self, command: str = "", stages: list | None = None):
        self.command = command
        self.stages = list(stages or [])
        self.num_reports = 0
        self._started = time.monotonic()

    def track(self, stage):
        """Registers one more stage object and returns it."""
        self.stages.append(stage)
        return stage

    def elapsed_sec(self) -> float:
        return time.monotonic() - self._started

    def print_stats(self):
        self.num_reports += 1
        command = f" '{self.command}'" if self.command else ""
        print(f">> STAT REPORT #{self.num_reports}{command}")
        print(f">>   Stages: {len(self.stages)}, elapsed: {self.elapsed_sec():.1f}s")
        for stage in self.stages:
            stage.print_stats()
