import numpy as np
import pytest
from scipy.stats import kstest

from hfsense.cohort import WindowSpec, build_windows, extract_features, modality_columns
from hfsense.har import mann_whitney
from hfsense.ingest import parse_streams
from hfsense.learn import loso_evaluate
from hfsense.synth import CohortSpec, generate, load_spec, write_cohort

SMALL = dict(n_participants=5, n_compensated=7, n_decompensated=6, enrollment_days=70)


def table_for(spec):
    return extract_features(build_windows(generate(spec), WindowSpec()))


def test_byte_identical_output(tmp_path):
    spec = CohortSpec(seed=5, **SMALL)
    a = write_cohort(generate(spec), tmp_path / "a", spec)
    b = write_cohort(generate(spec), tmp_path / "b", spec)
    assert sorted(a) == sorted(b)
    for k in a:
        assert a[k].read_bytes() == b[k].read_bytes(), k
    other = write_cohort(generate(CohortSpec(seed=6, **SMALL)), tmp_path / "c", spec)
    assert other["accel"].read_bytes() != a["accel"].read_bytes()


def test_ingest_accepts_everything_and_spec_round_trips(tmp_path):
    spec = CohortSpec(seed=2, **SMALL)
    write_cohort(generate(spec), tmp_path, spec)
    datasets, rejects = parse_streams(tmp_path)
    assert rejects.count() == 0
    assert sum(len(d.events) for d in datasets.values()) == spec.n_events
    assert sum(e.label for d in datasets.values() for e in d.events) == spec.n_decompensated
    assert load_spec(tmp_path / "cohort_spec.json") == spec


def test_every_participant_gets_an_event_and_labels_are_shuffled():
    data = generate(CohortSpec(seed=1, **SMALL))
    assert len(data) == 5 and all(len(d.events) >= 1 for d in data.values())


@pytest.mark.parametrize("field", ["p_no_accel", "survey_response_rate", "accel_completeness"])
@pytest.mark.parametrize("bad", [-0.1, 1.5])
def test_rates_validated(field, bad):
    with pytest.raises(ValueError, match=field):
        CohortSpec(**{field: bad})


def test_infeasible_specs_explain_themselves():
    with pytest.raises(ValueError, match="infeasible"):
        generate(CohortSpec(n_participants=1, n_compensated=40, n_decompensated=0, enrollment_days=60))
    with pytest.raises(ValueError, match="at least one event"):
        CohortSpec(n_participants=10, n_compensated=3, n_decompensated=3)
    with pytest.raises(ValueError, match="lookback"):
        CohortSpec(enrollment_days=21)


def test_effect_directions():
    t = table_for(CohortSpec(seed=0, n_participants=12, n_compensated=30, n_decompensated=30,
                             enrollment_days=160, delta_kccq=2, delta_motion=2, delta_social=2, p_no_kccq=0,
                             p_no_calls=0, p_no_accel=0))
    dec, comp = t[t.label == 1], t[t.label == 0]
    for c in modality_columns("kccq"):
        assert dec[c].mean() < comp[c].mean()
    assert dec["numCalls"].mean() < comp["numCalls"].mean()
    # durCalls is a window total; the planted effect is on length per call
    assert (dec.durCalls / dec.numCalls).mean() > (comp.durCalls / comp.numCalls).mean()
    assert dec["act_comp"].mean() < comp["act_comp"].mean()


def test_null_cohort_marginals_are_exchangeable():
    pvals = []
    for seed in range(12):
        spec = CohortSpec(seed=seed, n_participants=8, n_compensated=16, n_decompensated=14, enrollment_days=120,
                          delta_kccq=0, delta_motion=0, delta_social=0)
        t = table_for(spec)
        for c in ("act_mean", "act_comp", "numCalls", "durCalls", "kccq_sum_recent"):
            s = t[[c, "label"]].dropna()
            pos, neg = s.loc[s.label == 1, c], s.loc[s.label == 0, c]
            if len(pos) >= 3 and len(neg) >= 3:
                pvals.append(mann_whitney(pos, neg)[1])
    assert len(pvals) >= 40
    assert kstest(pvals, "uniform").pvalue > 0.001
    assert np.mean(np.asarray(pvals) < 0.05) < 0.2


@pytest.mark.slow
def test_large_effect_is_recoverable():
    vals = []
    for seed in range(2):
        spec = CohortSpec(seed=seed, delta_kccq=2, delta_motion=2, delta_social=2)
        vals.append(loso_evaluate(table_for(spec), ["kccq", "motion", "social"], "late", seed=seed).metrics["aucpr"])
    assert min(vals) >= 0.9
