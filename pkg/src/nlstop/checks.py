"""Pass/fail bookkeeping shared by the property checkers and the reports."""

from __future__ import annotations

from dataclasses import dataclass, field

from .numeric import format_number


@dataclass
class CheckResult:
    name: str
    anchor: str
    samples: int = 0
    violations: int = 0
    worst: object = 0
    witness: dict | None = None

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def record(self, ok: bool, magnitude=0, witness=None):
        self.samples += 1
        if ok:
            return
        self.violations += 1
        if magnitude > self.worst or self.witness is None:
            self.worst = max(self.worst, magnitude)
            self.witness = witness

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "anchor": self.anchor,
            "passed": self.passed,
            "samples": self.samples,
            "violations": self.violations,
            "worst_violation": format_number(self.worst),
            "witness": _jsonable(self.witness),
        }


@dataclass
class AxiomReport:
    results: list = field(default_factory=list)

    def add(self, name: str, anchor: str) -> CheckResult:
        r = CheckResult(name, anchor)
        self.results.append(r)
        return r

    def __getitem__(self, name) -> CheckResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def violations(self) -> int:
        return sum(r.violations for r in self.results)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [r.to_dict() for r in self.results]}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (set, frozenset)):
        return sorted(_jsonable(v) for v in x)
    if x is None or isinstance(x, (bool, int, str)):
        # node ids, counts and flags stay native; numbers from the model are Fractions
        return x
    return format_number(x)
