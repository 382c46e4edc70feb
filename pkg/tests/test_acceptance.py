"""Acceptance gate: one test per criterion, one printed pass/fail line each.

Run with ``pytest tests/test_acceptance.py -v -s``. The planted-signal
criterion trains the feature and temporal models over all leave-one-movie-out
folds of the 8x120 synthetic set and is the long pole (a few minutes).
"""

import itertools
import time

import numpy as np
import pytest

from aan import cli
from aan import checks
from aan import dataio as D
from aan import models as M
from aan import training as TR
from aan.attention import scaled_dot_product_attention
from aan.tensor import Tensor


def _criterion(capsys, name: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}"
    if detail:
        line += f" -- {detail}"
    with capsys.disabled():
        print(line)
    assert ok, line


@pytest.fixture(scope="module")
def planted(tmp_path_factory):
    """The acceptance dataset: 8 movies x 120 segments, noise 0.1, seed 42."""
    spec = D.SyntheticSpec(n_movies=8, segments_per_movie=120, seed=42, noise_std=0.1)
    manifest, records = D.synth_generate(spec)
    data_dir = tmp_path_factory.mktemp("planted")
    D.save_manifest(data_dir / "manifest.json", manifest)
    D.save_features(data_dir, manifest, records, fmt="binary")
    return data_dir, manifest, records


def ridge_oracle_pooled_pcc(manifest, records, lam: float = 1e-3) -> float:
    """Closed-form ridge regression on concatenated features, pooled over folds."""
    by_id = {r.clip_id: r for r in records}
    X = np.stack(
        [np.concatenate([by_id[row.clip_id].get(m) for m in D.MODALITY_ORDER]) for row in manifest]
    )
    y = np.array([row.arousal.value for row in manifest])
    movies = np.array([row.movie_id for row in manifest])
    preds, targets = [], []
    for movie in sorted(set(movies)):
        te = movies == movie
        tr = ~te
        mu, ym = X[tr].mean(axis=0), y[tr].mean()
        Xc, yc = X[tr] - mu, y[tr] - ym
        alpha = np.linalg.solve(Xc @ Xc.T + lam * np.eye(tr.sum()), yc)
        preds.append((X[te] - mu) @ (Xc.T @ alpha) + ym)
        targets.append(y[te])
    _, rho = D.pooled_metrics(np.concatenate(preds), np.concatenate(targets))
    return rho


def test_gradient_suite(capsys):
    start = time.monotonic()
    results = checks.run_gradient_suite(step=1e-5, tol=1e-4)
    elapsed = time.monotonic() - start
    failed = [name for name, rep in results if not rep.passed]
    worst = max(rep.max_rel_error for _, rep in results)
    _criterion(
        capsys,
        "gradient suite (primitives + all three models, step 1e-5, tol 1e-4)",
        not failed and elapsed < 120.0,
        f"{len(results)} cases, worst rel err {worst:.2e}, {elapsed:.1f} s" +
        (f", failed: {failed}" if failed else ""),
    )


def test_attention_matches_direct_oracle(capsys):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n_q, n_k, d_k, d_v = rng.integers(1, 7, size=4)
        q = rng.uniform(-2, 2, (n_q, d_k))
        k = rng.uniform(-2, 2, (n_k, d_k))
        v = rng.uniform(-2, 2, (n_k, d_v))
        got = scaled_dot_product_attention(Tensor(q), Tensor(k), Tensor(v)).data
        # direct evaluation of the scaled dot-product formula
        scores = q @ k.T / np.sqrt(d_k)
        w = np.exp(scores - scores.max(axis=-1, keepdims=True))
        w /= w.sum(axis=-1, keepdims=True)
        worst = max(worst, float(np.max(np.abs(got - w @ v))))
    _criterion(
        capsys,
        "attention oracle (100 random instances, elementwise 1e-12)",
        worst <= 1e-12,
        f"worst abs diff {worst:.2e}",
    )


def test_feature_model_permutation_invariance(capsys):
    rng = np.random.default_rng(7)
    params = M.init_feature_aan(np.random.default_rng(1), dropout_rate=0.1)
    worst = 0.0
    for _ in range(10):
        record = D.FeatureRecord(
            clip_id="r",
            **{name: rng.normal(0, 1, dim) for name, dim in D.MODALITY_DIMS.items()},
        )
        tokens = M.project_modalities(record, params).data
        base = M.feature_head_from_tokens(Tensor(tokens[None]), params).item()
        for perm in itertools.permutations(range(5)):
            out = M.feature_head_from_tokens(Tensor(tokens[list(perm)][None]), params).item()
            worst = max(worst, abs(out - base))
    _criterion(
        capsys,
        "permutation invariance (10 records x 120 permutations, 1e-9)",
        worst <= 1e-9,
        f"worst abs diff {worst:.2e}",
    )


def test_temporal_model_causality(capsys):
    rng = np.random.default_rng(13)
    worst = 0.0
    for length in (4, 5):
        params = M.init_temporal_aan(np.random.default_rng(length), seq_len=length, start_value=0.2)
        records = [
            D.FeatureRecord(
                clip_id=f"s{i}",
                **{name: rng.normal(0, 1, dim) for name, dim in D.MODALITY_DIMS.items()},
            )
            for i in range(length)
        ]
        prev = rng.uniform(-1, 1, length).tolist()
        base = M.temporal_aan_forward(records, prev, params).data
        for t in range(length):
            bumped_records = [
                D.FeatureRecord(
                    clip_id=r.clip_id,
                    **{
                        name: r.get(name) + (1.0 if i > t else 0.0)
                        for name in D.MODALITY_ORDER
                    },
                )
                for i, r in enumerate(records)
            ]
            out = M.temporal_aan_forward(bumped_records, prev, params).data
            worst = max(worst, float(np.max(np.abs(out[: t + 1] - base[: t + 1]))))

            bumped_prev = [p + (2.0 if i >= t else 0.0) for i, p in enumerate(prev)]
            out = M.temporal_aan_forward(records, bumped_prev, params).data
            worst = max(worst, float(np.max(np.abs(out[: t + 1] - base[: t + 1]))))
    _criterion(
        capsys,
        "causality (features > t, previous outputs >= t, L in {4, 5}, 1e-9)",
        worst <= 1e-9,
        f"worst abs diff {worst:.2e}",
    )


def test_loss_identities(capsys):
    rng = np.random.default_rng(3)
    target = rng.uniform(-1, 1, 16)
    perfect = TR.loss(Tensor(target), target).total_value
    zero_mean = target - target.mean()
    negated = TR.loss(Tensor(-zero_mean), zero_mean)
    mirror_gap = abs(negated.total_value - (negated.mse_value + 2.0))
    affine_gap = 0.0
    for a, b in ((2.5, 0.3), (0.01, -4.0), (17.0, 0.0)):
        affine_gap = max(affine_gap, abs(TR.pcc(a * target + b, zero_mean) - TR.pcc(target, zero_mean)))
    ok = perfect <= 1e-12 and mirror_gap <= 1e-12 and affine_gap <= 1e-12
    _criterion(
        capsys,
        "loss identities (L(t,t)=0; L(-t,t)=MSE+2; pcc affine invariance 1e-12)",
        ok,
        f"perfect {perfect:.2e}, mirror gap {mirror_gap:.2e}, affine gap {affine_gap:.2e}",
    )


def test_planted_signal_recovery(planted, tmp_path, capsys):
    data_dir, manifest, records = planted
    oracle = ridge_oracle_pooled_pcc(manifest, records)
    assert oracle >= 0.9, f"ridge oracle floor unexpectedly low: {oracle}"
    floor = max(0.8, oracle - 0.1)

    feature_run = cli.RunConfig(
        model="feature", target="arousal", preset="cognimuse_feature",
        data=data_dir, out=tmp_path / "feature", seed=42, n_layers=2, n_heads=2,
        train=TR.get_preset("cognimuse_feature"),
    )
    start = time.monotonic()
    feature_report = cli.run_folds(feature_run, retrain=True)
    feature_time = time.monotonic() - start

    temporal_run = cli.RunConfig(
        model="temporal", target="arousal", preset="cognimuse_temporal",
        data=data_dir, out=tmp_path / "temporal", seed=42, n_layers=2, n_heads=2,
        train=TR.get_preset("cognimuse_temporal"),
    )
    start = time.monotonic()
    temporal_report = cli.run_folds(temporal_run, retrain=True)
    temporal_time = time.monotonic() - start

    ok = (
        feature_report.pooled_pcc >= floor
        and temporal_report.pooled_pcc >= 0.6
        and feature_time < 600.0
        and temporal_time < 600.0
    )
    _criterion(
        capsys,
        "planted-signal recovery (feature >= max(0.8, oracle-0.1); temporal >= 0.6; each < 10 min)",
        ok,
        f"oracle {oracle:.4f}, feature {feature_report.pooled_pcc:.4f} in {feature_time:.0f} s, "
        f"temporal {temporal_report.pooled_pcc:.4f} in {temporal_time:.0f} s",
    )


def test_eval_determinism(tmp_path, capsys):
    data_dir = tmp_path / "data"
    assert cli.main([
        "synth", "--out", str(data_dir), "--movies", "2", "--segments", "10",
        "--seed", "7", "--smoothing-window", "3", "--format", "binary",
    ]) == 0
    tables = []
    for name in ("runA", "runB"):
        out = tmp_path / name
        code = cli.main([
            "eval", "--data", str(data_dir), "--out", str(out), "--model", "feature",
            "--max-epochs", "6", "--batch-size", "6", "--seed", "5",
        ])
        assert code == 0
        tables.append((out / "results.csv").read_bytes())
    _criterion(
        capsys,
        "determinism (two `eval` runs, identical seed, byte-identical tables)",
        tables[0] == tables[1],
        f"{len(tables[0])} bytes each",
    )


def test_leave_one_movie_out_and_pooled_metrics(capsys):
    spec = D.SyntheticSpec(n_movies=12, segments_per_movie=6, seed=11, noise_std=0.1, smoothing_window=3)
    manifest, _ = D.synth_generate(spec)
    folds = D.split_leave_one_movie_out(manifest)
    twelve = len(folds) == 12
    test_ids = [row.clip_id for _, test in folds for row in test]
    partition = sorted(test_ids) == sorted(r.clip_id for r in manifest) and len(set(test_ids)) == len(test_ids)

    rng = np.random.default_rng(4)
    preds = rng.uniform(-1, 1, 10)
    targets = rng.uniform(-1, 1, 10)
    got_mse, got_pcc = D.pooled_metrics(preds, targets)
    # direct-formula oracle
    want_mse = float(np.mean((preds - targets) ** 2))
    pc, tc = preds - preds.mean(), targets - targets.mean()
    want_pcc = float(np.sum(pc * tc) / np.sqrt(np.sum(pc * pc) * np.sum(tc * tc)))
    metrics_ok = abs(got_mse - want_mse) <= 1e-12 and abs(got_pcc - want_pcc) <= 1e-12

    _criterion(
        capsys,
        "leave-one-movie-out (12 folds partition; pooled metrics match oracle to 1e-12)",
        twelve and partition and metrics_ok,
        f"folds {len(folds)}, mse gap {abs(got_mse - want_mse):.1e}, pcc gap {abs(got_pcc - want_pcc):.1e}",
    )
