"""Pass/fail check rows shared by the verification and consensus suites."""

from dataclasses import dataclass


@dataclass
class CheckResult:
    check: str
    observed: float
    bound_or_band: float
    margin: float
    passed: bool


@dataclass
class SuiteReport:
    name: str
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("check,observed,bound_or_band,margin,pass\n")
            for c in self.checks:
                fh.write(
                    f"{c.check},{c.observed!r},{c.bound_or_band!r},{c.margin!r},{str(c.passed).lower()}\n"
                )

    def lines(self):
        return [
            f"[{'PASS' if c.passed else 'FAIL'}] {c.check}: observed={c.observed:.6g} "
            f"bound_or_band={c.bound_or_band:.6g} margin={c.margin:.6g}"
            for c in self.checks
        ]
