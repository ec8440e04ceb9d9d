"""Drive a full offline experiment through the command-line entry point."""

from __future__ import annotations

from pathlib import Path

from dpaf.cli import main

SMALL_TOML = "[cohort]\ncohort_size = {size}\nsubsample_size = {sub}\nmin_cell = {cell}\n"


def write_config(path: Path, size: int = 1500, sub: int = 400, cell: int = 5) -> Path:
    path.write_text(SMALL_TOML.format(size=size, sub=sub, cell=cell))
    return path


def write_institutions(path: Path, per_tier: int = 3) -> Path:
    rates = {"Tier1": 0.10, "Tier2": 0.22, "Tier3": 0.40}
    lines = ["name,acceptance_rate"]
    for tier, rate in rates.items():
        lines += [f"{tier} College {k},{rate + k / 1000:.3f}" for k in range(per_tier)]
    path.write_text("\n".join(lines) + "\n")
    return path


def pipeline_steps(root: Path, seed: int, config: Path | None = None, institutions: Path | None = None,
                   s2_fraction: float = 0.1, fit: str = "glmm") -> list[list[str]]:
    base = ["--out-dir", str(root), "--seed", str(seed)]
    if config is not None:
        base += ["--config", str(config)]
    plan = ["plan"] + (["--institutions", str(institutions)] if institutions else [])
    steps = [["generate"], plan]
    for mode in ("omitted", "specified"):
        steps.append(["run", "--system", "s1", "--mode", mode, "--mock"])
        steps.append(["run", "--system", "s2", "--mode", mode, "--mock", "--fraction", str(s2_fraction)])
        steps.append(["tag", "--mode", mode, "--mock"])
    steps += [["analyze", "--fit", fit], ["report"]]
    return [base + s for s in steps]


def run_pipeline(root: Path, seed: int, **kw) -> None:
    for argv in pipeline_steps(root, seed, **kw):
        code = main(argv)
        if code != 0:
            raise RuntimeError(f"dpaf {' '.join(argv)} exited with {code}")
