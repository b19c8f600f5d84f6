"""Collects one verdict per acceptance criterion for the terminal summary."""

CRITERIA = {
    1: "phase-1 reproduction",
    2: "phase-2 reproduction",
    3: "cost cross-check",
    4: "turnpike property",
    5: "Hamiltonian conservation",
    6: "adjoint correctness",
    7: "singular-control formula",
    8: "control-law oracle",
    9: "predictor benefit",
    10: "direct structure discovery",
    11: "warm start",
}

results: dict[int, tuple[bool, str]] = {}


def record(number: int, passed: bool, detail: str) -> bool:
    results[number] = (bool(passed), detail)
    return bool(passed)


def lines() -> list[str]:
    out = []
    for n, name in CRITERIA.items():
        if n in results:
            ok, detail = results[n]
            out.append(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {name}: {detail}")
        else:
            out.append(f"[NOT RUN] {n:2d}. {name}")
    return out
