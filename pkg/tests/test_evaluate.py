import inspect

import numpy as np
import pytest

from agentgate.evaluate import (
    AblationSpec,
    LatencyStats,
    asr_reduction,
    asr_reduction_from_scores,
    auc,
    best_f1,
    bootstrap_ci,
    default_ablation_specs,
    evaluate_scored,
    measure_latency,
    per_family_asr_from_scores,
    prf1,
    run_ablation,
    score_sessions,
)
from agentgate.features import FEATURE_GROUPS
from agentgate.gbdt import TrainConfig
from agentgate.policy import Thresholds
from agentgate.trace import ATTACK_FAMILIES, LABEL_ADVERSARIAL

TH = Thresholds(tau1=0.3, tau2=0.7)


# --- AUC ---------------------------------------------------------------------

def pairwise_auc(scores, labels):
    """O(n^2) oracle: P(random positive outscores random negative), ties half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def test_auc_perfect_ranking():
    assert auc([0.9, 0.1], [1, 0]) == 1.0


def test_auc_all_ties_half():
    assert auc([0.5] * 10, [1, 0] * 5) == 0.5


def test_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(3)
    for trial in range(20):
        n = int(rng.integers(5, 200))
        scores = rng.random(n)
        scores[rng.random(n) < 0.3] = 0.5  # force ties
        labels = rng.integers(0, 2, size=n)
        if labels.sum() in (0, n):
            labels[0] = 1 - labels[0]
        assert auc(scores, labels) == pytest.approx(
            pairwise_auc(scores, labels), abs=1e-12
        )


def test_auc_degenerate_rejected():
    with pytest.raises(ValueError, match="degenerate-auc"):
        auc([0.5, 0.6], [1, 1])


# --- precision / recall / F1 ----------------------------------------------------

def test_prf1_perfect():
    result = prf1([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0], 0.5)
    assert (result.precision, result.recall, result.f1) == (1.0, 1.0, 1.0)


def test_prf1_nothing_predicted():
    result = prf1([0.1, 0.2, 0.3, 0.4], [1, 1, 0, 0], 0.9)
    assert result.precision == 0.0
    assert result.precision_undefined
    assert result.recall == 0.0
    assert result.f1 == 0.0


def test_prf1_hand_counted_confusion_matrix():
    scores = [0.9, 0.8, 0.7, 0.6, 0.55, 0.4, 0.3, 0.75, 0.2, 0.1,
              0.95, 0.85, 0.45, 0.35, 0.65, 0.05, 0.15, 0.25, 0.5, 0.6]
    labels = [1, 1, 0, 1, 0, 1, 0, 1, 0, 0,
              1, 0, 1, 0, 1, 0, 1, 0, 1, 1]
    thr = 0.5
    tp = sum(1 for s, y in zip(scores, labels) if s >= thr and y == 1)
    fp = sum(1 for s, y in zip(scores, labels) if s >= thr and y == 0)
    fn = sum(1 for s, y in zip(scores, labels) if s < thr and y == 1)
    result = prf1(scores, labels, thr)
    assert result.precision == pytest.approx(tp / (tp + fp))
    assert result.recall == pytest.approx(tp / (tp + fn))
    expected_f1 = 2 * result.precision * result.recall / (result.precision + result.recall)
    assert result.f1 == pytest.approx(expected_f1)


def test_best_f1_dominates_fixed_thresholds():
    rng = np.random.default_rng(5)
    scores = rng.random(200)
    labels = (scores + rng.normal(0, 0.3, 200) > 0.5).astype(int)
    _, best = best_f1(scores, labels)
    for thr in (0.1, 0.3, 0.5, 0.7, 0.9):
        assert best >= prf1(scores, labels, thr).f1 - 1e-12


# --- ASR reduction ----------------------------------------------------------------

def _attack_session(n_turns, unsafe_turn, sid):
    from agentgate.trace import ProposedAction, Session, Tool, Turn

    turns = tuple(
        Turn(index=i + 1, prompt="p", external_content=None,
             action=ProposedAction(tool=Tool.WEB_FETCH, argument="https://x.example"))
        for i in range(n_turns)
    )
    return Session(session_id=sid, turns=turns, label=LABEL_ADVERSARIAL,
                   family="split_exfil", unsafe_turn=unsafe_turn)


def _scored_attacks(per_session_scores, unsafe_turns):
    return [
        (_attack_session(len(s), u, f"a{i}"), s)
        for i, (s, u) in enumerate(zip(per_session_scores, unsafe_turns))
    ]


def test_always_block_prevents_everything():
    scored = _scored_attacks([[0.99, 0.99], [0.95]], [2, 1])
    assert asr_reduction_from_scores(scored, TH) == 1.0
    success = per_family_asr_from_scores(scored, TH)
    assert all(v == 0.0 for v in success.values())


def test_never_block_prevents_nothing():
    scored = _scored_attacks([[0.1, 0.1], [0.2]], [2, 1])
    assert asr_reduction_from_scores(scored, TH) == 0.0


def test_block_at_unsafe_turn_counts_as_prevented():
    scored = _scored_attacks([[0.1, 0.7]], [2])
    assert asr_reduction_from_scores(scored, TH) == 1.0
    late = _scored_attacks([[0.1, 0.7, 0.9]], [1])
    assert asr_reduction_from_scores(late, TH) == 0.0


def test_asr_requires_attacks():
    with pytest.raises(ValueError):
        asr_reduction_from_scores([], TH)


def test_asr_plus_weighted_family_success_is_one(small_corpus, small_model, small_profile, small_calibration):
    from agentgate.baselines import GbdtDetector

    detector = GbdtDetector(small_model, small_profile)
    attacks = [s for s in small_corpus.test if s.label == LABEL_ADVERSARIAL]
    scored = score_sessions(detector, attacks)
    thresholds = small_calibration.thresholds
    asr = asr_reduction_from_scores(scored, thresholds)
    success = per_family_asr_from_scores(scored, thresholds)
    weights = {f: sum(1 for s in attacks if s.family == f) for f in ATTACK_FAMILIES}
    mean_success = sum(success[f] * weights[f] for f in success) / sum(weights.values())
    assert asr + mean_success == pytest.approx(1.0, abs=1e-12)


def test_detector_level_asr_wrapper(small_corpus, small_model, small_profile, small_calibration):
    from agentgate.baselines import GbdtDetector

    detector = GbdtDetector(small_model, small_profile)
    attacks = [s for s in small_corpus.test if s.label == LABEL_ADVERSARIAL][:30]
    value = asr_reduction(detector, small_calibration.thresholds, attacks)
    assert 0.0 <= value <= 1.0


# --- bootstrap ----------------------------------------------------------------------

def test_bootstrap_constant_metric_zero_width():
    lo, hi = bootstrap_ci(lambda idx: 0.42, n_items=50, n_samples=200, seed=1)
    assert (lo, hi) == (0.42, 0.42)


def test_bootstrap_deterministic():
    rng = np.random.default_rng(7)
    data = rng.random(80)
    stat = lambda idx: float(np.mean(data[idx]))
    assert bootstrap_ci(stat, 80, 300, seed=5) == bootstrap_ci(stat, 80, 300, seed=5)
    assert bootstrap_ci(stat, 80, 300, seed=5) != bootstrap_ci(stat, 80, 300, seed=6)


def test_bootstrap_contains_point_estimate_on_random_data():
    rng = np.random.default_rng(11)
    for trial in range(100):
        data = rng.normal(size=60)
        point = float(np.mean(data))
        lo, hi = bootstrap_ci(lambda idx: float(np.mean(data[idx])), 60, 200, seed=trial)
        assert lo <= point <= hi


def test_bootstrap_default_samples_is_500():
    assert inspect.signature(bootstrap_ci).parameters["n_samples"].default == 500


def test_bootstrap_minimum_samples():
    with pytest.raises(ValueError):
        bootstrap_ci(lambda idx: 0.0, 10, n_samples=50, seed=0)


def test_bootstrap_skips_degenerate_resamples():
    labels = np.array([1] + [0] * 30)
    scores = np.arange(31, dtype=float)
    lo, hi = bootstrap_ci(lambda idx: auc(scores[idx], labels[idx]), 31, 200, seed=2)
    assert 0.0 <= lo <= hi <= 1.0


# --- ablation specs -------------------------------------------------------------------

def test_ablation_mask_sizes():
    for group, names in FEATURE_GROUPS.items():
        isolated = AblationSpec("isolated", group)
        loo = AblationSpec("leave_one_out", group)
        assert len(isolated.feature_names()) == len(names)
        assert len(loo.feature_names()) == 42 - len(names)
        assert len(isolated.feature_names()) + len(loo.feature_names()) == 42
    assert len(AblationSpec("full", "all").feature_names()) == 42


def test_ablation_spec_validation():
    with pytest.raises(ValueError):
        AblationSpec("isolated", "nope")
    with pytest.raises(ValueError):
        AblationSpec("sideways", "fraud")
    with pytest.raises(ValueError):
        AblationSpec("full", "fraud")


def test_default_specs_cover_table_layout():
    specs = default_ablation_specs()
    assert len(specs) == 11
    assert [s.mode for s in specs].count("isolated") == 5
    assert [s.mode for s in specs].count("leave_one_out") == 5
    assert specs[-1].mode == "full"


def test_run_ablation_smoke(small_datasets):
    train_ds, valid_ds, test_ds = small_datasets
    rows = run_ablation(
        train_ds, valid_ds, test_ds,
        TrainConfig(n_estimators=10, max_depth=3),
        [AblationSpec("isolated", "fraud"), AblationSpec("full", "all")],
    )
    assert [r.z_size for r in rows] == [11, 42]
    for row in rows:
        assert 0.0 <= row.auc <= 1.0
        assert 0.0 <= row.f1 <= 1.0
        assert 0.0 <= row.asr_reduction <= 1.0


# --- latency ---------------------------------------------------------------------------

def test_measure_latency_requires_enough_prefixes(small_corpus, small_model, small_profile):
    from agentgate.baselines import GbdtDetector

    detector = GbdtDetector(small_model, small_profile)
    with pytest.raises(ValueError):
        measure_latency(detector, small_corpus.test[:3])


def test_measure_latency_reports_positive_median(small_corpus, small_model, small_profile):
    from agentgate.baselines import GbdtDetector

    detector = GbdtDetector(small_model, small_profile)
    stats = measure_latency(detector, small_corpus.test[:60])
    assert isinstance(stats, LatencyStats)
    assert stats.n_prefixes == sum(len(s.turns) for s in small_corpus.test[:60])
    assert 0 < stats.p50_ms <= stats.p95_ms


# --- report ---------------------------------------------------------------------------

def test_report_invariants_and_determinism(small_corpus, small_model, small_profile, small_calibration):
    from agentgate.baselines import GbdtDetector

    detector = GbdtDetector(small_model, small_profile)
    scored = score_sessions(detector, small_corpus.test)
    build = lambda: evaluate_scored(
        scored, small_calibration.thresholds, "ours",
        corpus_manifest_hash="abc123", bootstrap_samples=120, bootstrap_seed=9,
    )
    report = build()
    assert report.ci["auc"][0] <= report.auc <= report.ci["auc"][1]
    assert report.ci["f1"][0] <= report.f1 <= report.ci["f1"][1]
    assert report.ci["asr_reduction"][0] <= report.asr_reduction <= report.ci["asr_reduction"][1]
    assert 0.0 <= report.asr_reduction <= 1.0
    assert set(report.per_family_attack_success) <= set(ATTACK_FAMILIES)
    assert report.best_f1 >= report.f1 - 1e-12
    assert report.n_sessions == len(small_corpus.test)
    assert report.to_dict() == build().to_dict()
