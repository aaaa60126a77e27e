import os
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

HEADERS = {
    "accel": "participant_id,t_ms,x_g,y_g,z_g",
    "calls": "participant_id,t_ms,duration_s,contact_id",
    "locations": "participant_id,t_ms,lat_deg,lon_deg",
    "kccq": "participant_id,t_ms,phys,symp,qol,soc",
    "events": "participant_id,t_ms,label",
}


def write_inputs(root, **bodies):
    """Write the five input files; ``bodies`` maps stream to a list of data lines."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for stream, header in HEADERS.items():
        lines = [header] + list(bodies.get(stream, []))
        (root / f"{stream}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return root


@pytest.fixture
def inputs(tmp_path):
    return lambda **bodies: write_inputs(tmp_path / "in", **bodies)


SMALL_SPEC = dict(n_participants=6, n_compensated=9, n_decompensated=7, enrollment_days=90)


@pytest.fixture(scope="session")
def small_cohort_dir(tmp_path_factory):
    from hfsense.synth import CohortSpec, generate, write_cohort

    spec = CohortSpec(seed=3, **SMALL_SPEC)
    out = tmp_path_factory.mktemp("small_cohort")
    write_cohort(generate(spec), out, spec)
    return out


@pytest.fixture(scope="session")
def small_table():
    from hfsense.cohort import WindowSpec, build_windows, extract_features
    from hfsense.synth import CohortSpec, generate

    spec = CohortSpec(seed=11, n_participants=10, n_compensated=20, n_decompensated=16, enrollment_days=140,
                      delta_kccq=1.5, delta_motion=1.5, delta_social=1.5)
    return extract_features(build_windows(generate(spec), WindowSpec()))


def fake_har(root, n_per_class=40, seed=0, split="train"):
    """Miniature UCI HAR layout: walking windows oscillate, sedentary ones are still."""
    rng = np.random.default_rng(seed)
    root = Path(root)
    sig = root / split / "Inertial Signals"
    sig.mkdir(parents=True, exist_ok=True)
    t = np.arange(128) / 50.0
    labels = np.r_[rng.integers(1, 4, n_per_class), rng.integers(4, 7, n_per_class)]
    rows = {a: [] for a in "xyz"}
    for lab in labels:
        for k, a in enumerate("xyz"):
            noise = 0.01 * rng.standard_normal(128)
            if lab <= 3:
                amp = rng.uniform(0.15, 0.4)
                rows[a].append(amp * np.sin(2 * np.pi * rng.uniform(1.2, 2.2) * t + rng.uniform(0, 6) + k) + noise)
            else:
                rows[a].append(noise)
    for a in "xyz":
        for prefix in ("body_acc", "total_acc"):
            np.savetxt(sig / f"{prefix}_{a}_{split}.txt", np.asarray(rows[a]), fmt="%.8e")
    np.savetxt(root / split / f"y_{split}.txt", labels, fmt="%d")
    np.savetxt(root / split / f"subject_{split}.txt", rng.integers(1, 10, len(labels)), fmt="%d")
    return root


def read_artifact(path):
    return pd.read_csv(path, comment="#")


SMALL_SYNTH_FLAGS = ["--n-participants", "10", "--n-compensated", "20", "--n-decompensated", "16",
                     "--enrollment-days", "120"]


def run_all_subcommands(root, threads, har_root):
    """Run every subcommand on a small synthetic cohort; returns {relative path: bytes}."""
    from hfsense.cli import main

    root = Path(root)
    t = ["--threads", str(threads)]
    steps = [
        ["synth", "--seed", "7", "--out", root / "raw", *SMALL_SYNTH_FLAGS],
        ["ingest", "--input", root / "raw", "--out", root / "clean", "--salt", "pepper", "--seed", "7", *t],
        ["extract", "--input", root / "clean", "--out", root / "feat", "--seed", "7", *t],
        ["train", "--input", root / "feat", "--out", root / "late", "--seed", "7", *t],
        ["train", "--input", root / "feat", "--out", root / "early", "--fusion", "early", "--seed", "7", *t],
        ["sweep", "--input", root / "clean", "--out", root / "sweep", "--shifts", "0,2", "--seed", "7", *t],
        ["explain", "--input", root / "feat", "--out", root / "explain", "--seed", "7", *t],
        ["har", "--har-path", har_root, "--input", root / "clean", "--out", root / "har", "--trees", "10",
         "--seed", "7", *t],
        ["doubleplot", "--input", root / "clean", "--out", root / "dp", "--seed", "7", *t],
        ["kde", "--input", root / "clean", "--out", root / "kde", "--grid", "40", "--seed", "7", *t],
    ]
    for argv in steps:
        code = main([str(a) for a in argv])
        assert code == 0, argv
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record a criterion outcome: call with (number, description) inside the test, then run the checks."""
    state = {}

    def declare(number, description):
        state.update(number=number, description=description)

    yield declare
    if state:
        rep = getattr(request.node, "rep_call", None)
        ok = rep is not None and rep.passed
        detail = "" if ok or rep is None else str(rep.longrepr.reprcrash.message).splitlines()[0]
        ACCEPTANCE[state["number"]] = (ok, state["description"], detail)


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    if rep.when == "call":
        item.rep_call = rep
    return rep


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        ok, desc, detail = ACCEPTANCE[key]
        line = f"criterion {key:>3}: {'PASS' if ok else 'FAIL'}  {desc}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
