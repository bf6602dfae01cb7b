import math

import numpy as np
import pytest

from trialemu.causal import hazard_ratio
from trialemu.synth import (
    DEFAULT_TEMPLATES, NoteTemplate, SynthConfig, SynthError, generate_cohort, generate_notes, generate_patients,
    marginal_hazard_ratio, score_extractions,
)

ZERO = (0.0,) * 6


def test_null_randomized_hr_near_one():
    ds, truth = generate_cohort(SynthConfig(n=5000, gamma=ZERO, true_log_hr=0.0, seed=1))
    assert truth.true_hr == 1.0
    assert 0.93 <= hazard_ratio(ds.X, ds.W, ds.Y, ds.D, "CoxPH-U").hr <= 1.08


def test_unconfounded_effect_recovered():
    # with no prognostic covariates the conditional and marginal hazard ratios coincide
    cfg = SynthConfig(n=5000, gamma=ZERO, beta=ZERO, baseline_rate=1 / 800, seed=1)
    ds, _ = generate_cohort(cfg)
    assert 0.5 <= ds.D.mean() <= 0.7
    assert abs(hazard_ratio(ds.X, ds.W, ds.Y, ds.D, "CoxPH-U").hr - 0.7) <= 0.05


def test_prognostic_covariates_attenuate_marginal_hr():
    # the conditional effect of a Cox model is not collapsible over prognostic covariates
    assert marginal_hazard_ratio(SynthConfig(), n=100_000) > 0.74
    assert marginal_hazard_ratio(SynthConfig(beta=ZERO), n=100_000) == pytest.approx(0.7, abs=0.01)


def test_same_seed_identical():
    a, ta = generate_cohort(SynthConfig(n=300, seed=5, mcar_rate=0.2))
    b, tb = generate_cohort(SynthConfig(n=300, seed=5, mcar_rate=0.2))
    for f in ("W", "Y", "D", "X", "missing_mask"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    assert np.array_equal(ta.propensity, tb.propensity)


def test_treated_fraction_randomized():
    for seed in range(5):
        cfg = SynthConfig(n=4000, gamma=ZERO, seed=seed)
        ds, _ = generate_cohort(cfg)
        assert abs(ds.W.mean() - 0.5) <= 2 / math.sqrt(cfg.n)


def test_confounding_direction():
    ds, _ = generate_cohort(SynthConfig(seed=0))
    u = hazard_ratio(ds.X, ds.W, ds.Y, ds.D, "CoxPH-U").hr
    w = hazard_ratio(ds.X, ds.W, ds.Y, ds.D, "CoxPH-IPSW").hr
    target = marginal_hazard_ratio(SynthConfig())
    assert abs(w - target) < abs(u - target)


def test_outcome_shape_and_censoring():
    ds, truth = generate_cohort(SynthConfig(n=1000, seed=2))
    assert ds.Y.min() >= 1 and ds.Y.max() <= 730
    assert set(np.unique(ds.D)) <= {0, 1}
    assert np.all((truth.propensity > 0) & (truth.propensity < 1))
    assert truth.to_dict()["true_hr"] == pytest.approx(0.7)


def test_weibull_and_exponential_censoring():
    ds, _ = generate_cohort(SynthConfig(n=500, weibull_shape=1.5, censor_rate=1 / 1000, admin_censor_days=None,
                                        seed=3))
    assert 0 < ds.D.mean() < 1


def test_mcar_masks_after_outcome():
    a, _ = generate_cohort(SynthConfig(n=500, seed=4))
    b, _ = generate_cohort(SynthConfig(n=500, seed=4, mcar_rate=0.3))
    assert np.array_equal(a.Y, b.Y) and np.array_equal(a.W, b.W)
    assert 0.25 < b.missing_mask.mean() < 0.35
    assert np.all(b.X[b.missing_mask] == 0)


@pytest.mark.parametrize("kw", [{"n": 3}, {"baseline_rate": 0}, {"mcar_rate": 1.0}, {"gamma": (1.0,)},
                                {"binary_prevalence": (0.0, 0.5)}])
def test_config_validation(kw):
    with pytest.raises(SynthError):
        SynthConfig(**kw)


def test_patients_feed_the_bundled_trial():
    patients, _ = generate_patients(SynthConfig(n=50, seed=1))
    assert len({p.patient_id for p in patients}) == 50
    assert all(p.diagnoses[0].stage == "IV" for p in patients)


def test_notes_plant_ecog_label():
    patients, _ = generate_patients(SynthConfig(n=20, seed=3))
    notes, labels = generate_notes(patients, [t for t in DEFAULT_TEMPLATES if t.name == "ecog"], seed=3)
    assert len(notes) == 20
    for n in notes:
        mine = [lab for lab in labels if lab["note_id"] == n.note_id]
        assert mine and mine[0]["kind"] == "ecog" and mine[0]["intent"] == "asserted"
        assert str(mine[0]["value"]) in n.text


def test_distractor_labelled_not_administered():
    patients, _ = generate_patients(SynthConfig(n=10, seed=3))
    tpl = [t for t in DEFAULT_TEMPLATES if t.name == "med_hypothetical"]
    notes, labels = generate_notes(patients, tpl, seed=3)
    assert all(lab["intent"] == "hypothetical" for lab in labels)
    assert all(lab["value"][1] == "mentioned-not-administered" for lab in labels)
    assert score_extractions(notes, labels)["recall"] == 1.0


def test_empty_patient_list():
    assert generate_notes([], DEFAULT_TEMPLATES, seed=0) == ([], [])


def test_sidecar_completeness():
    patients, _ = generate_patients(SynthConfig(n=40, seed=8))
    notes, labels = generate_notes(patients, DEFAULT_TEMPLATES, seed=8)
    score = score_extractions(notes, labels)
    assert score["n_gold"] == score["n_pred"] == len(labels)
    assert score["missed"] == [] and score["spurious"] == []


def test_custom_template():
    patients, _ = generate_patients(SynthConfig(n=4, seed=0))
    tpl = NoteTemplate("x", "ECOG {ecog}.", lambda v: [("ecog", "asserted", v["ecog"])])
    notes, labels = generate_notes(patients, [tpl], seed=0)
    assert len(labels) == 4 and score_extractions(notes, labels)["precision"] == 1.0
