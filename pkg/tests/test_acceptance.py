"""Acceptance suite: one test and one printed pass/fail line per contract.

The long-running convergence contracts train full models and take several
minutes each; run this module alone with ``pytest tests/test_acceptance.py -v``
when iterating on anything else.
"""

import time

import numpy as np

from fdcheck import fd_grad, relative_error
from lpfiqa.cli import main
from lpfiqa.dataset import (
    assign_categories,
    quartile_boundaries,
    read_feature_file,
    split_train_test,
    synthesize_dataset,
)
from lpfiqa.errors import ChecksumError
from lpfiqa.losses import LossWeights, cross_entropy_loss, mse_loss
from lpfiqa.metrics import plcc, srocc
from lpfiqa.model import LpfModel, ModelConfig, make_pair_batch
from lpfiqa.trainer import (
    TrainConfig,
    _train_batch,
    deserialize_checkpoint,
    load_checkpoint,
    restore_model,
    save_checkpoint,
    serialize_checkpoint,
    train,
)

RESULTS: list[str] = []


def check(name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    assert ok, line


def read_telemetry(path):
    rows = path.read_text().splitlines()[1:]
    cells = [row.split(",") for row in rows]
    return {
        "test_plcc": np.array([float(c[7]) for c in cells]),
        "test_srocc": np.array([float(c[8]) for c in cells]),
    }


def run_cli(argv):
    code = main(argv)
    assert code == 0, f"command {argv[0]} exited {code}"


# ---------------------------------------------------------------------------
# fast contracts


def test_gradient_correctness():
    # End-to-end: the combined loss gradient of every trainable parameter in
    # every stack matches central finite differences on a small model.
    config = ModelConfig(input_dim=5, embed_dim=8, hidden_dim=6, dropout_rate=0.0)
    weights = LossWeights()
    worst = 0.0
    started = time.perf_counter()
    for seed in range(20):
        rng = np.random.default_rng(seed)
        feats = rng.normal(size=(6, 5))
        scores = rng.uniform(size=6)
        cats = assign_categories(scores, quartile_boundaries(scores))
        model = LpfModel(config, seed=seed)
        model.set_train()

        def batch_loss(_ignored):
            latent = model.embed(feats)
            _, _, estimate = model.quality(latent)
            loss, _ = mse_loss(estimate, scores)
            class_loss, _ = cross_entropy_loss(model.class_probs(latent), cats)
            pair_batch = make_pair_batch(latent, scores)
            pair_loss, _ = mse_loss(model.pair_scores(pair_batch), pair_batch.score_gaps)
            return (
                weights.class_weight * class_loss
                + weights.pair_weight * pair_loss
                + loss
            )

        _train_batch(model, feats, scores, cats, weights)
        for name, value, grad in model.trainable_parameters():
            approx = fd_grad(lambda _: batch_loss(None), value)
            err = relative_error(grad, approx)
            worst = max(worst, err)
            assert err < 1e-4, f"seed {seed} {name}: relative error {err:.3e}"
    elapsed = time.perf_counter() - started
    check(
        "gradient-correctness",
        worst < 1e-4 and elapsed < 30.0,
        f"max relative error {worst:.3e} over 20 seeds in {elapsed:.1f}s",
    )


def oracle_plcc(x, y):
    xc = x - x.mean()
    yc = y - y.mean()
    return float((xc * yc).sum() / np.sqrt((xc * xc).sum() * (yc * yc).sum()))


def oracle_ranks(x):
    # Comparison counting; valid for tie-free data only.
    return (x[None, :] < x[:, None]).sum(axis=1) + 1.0


def test_metric_oracles():
    rng = np.random.default_rng(42)
    worst = 0.0
    started = time.perf_counter()
    for _ in range(1000):
        n = int(rng.integers(2, 101))
        x = rng.normal(size=n)
        y = rng.normal(size=n)
        while len(np.unique(x)) < n or len(np.unique(y)) < n:
            x = rng.normal(size=n)
            y = rng.normal(size=n)
        worst = max(worst, abs(plcc(x, y) - oracle_plcc(x, y)))
        rank_pearson = oracle_plcc(oracle_ranks(x), oracle_ranks(y))
        worst = max(worst, abs(srocc(x, y) - rank_pearson))
        d = oracle_ranks(x) - oracle_ranks(y)
        closed_form = 1.0 - 6.0 * float(d @ d) / (n * (n * n - 1))
        worst = max(worst, abs(srocc(x, y) - closed_form))
    elapsed = time.perf_counter() - started
    check(
        "metric-oracles",
        worst < 1e-10 and elapsed < 10.0,
        f"max deviation {worst:.3e} over 1000 tie-free vectors in {elapsed:.1f}s",
    )


def test_pair_enumeration():
    rng = np.random.default_rng(0)
    checked = 0
    for n in range(2, 33):
        latent = rng.normal(size=(n, 3))
        scores = rng.uniform(size=n)
        batch = make_pair_batch(latent, scores)
        k = 0
        for i in range(n):
            for j in range(i + 1, n):
                assert tuple(batch.index_pairs[k]) == (i, j)
                np.testing.assert_array_equal(batch.feature_gaps[k], latent[i] - latent[j])
                assert batch.score_gaps[k] == scores[i] - scores[j]
                k += 1
        assert k == n * (n - 1) // 2
        assert batch.index_pairs.shape[0] == k
        checked += k
        if n == 16:
            assert k == 120
    check(
        "pair-enumeration",
        True,
        f"exact double-loop match for n=2..32 ({checked} pairs), n=16 gives 120",
    )


def test_label_balance():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(500):
        n = int(rng.integers(8, 257))
        scores = rng.normal(size=n)
        while len(np.unique(scores)) < n:
            scores = rng.normal(size=n)
        cats = assign_categories(scores, quartile_boundaries(scores))
        counts = np.bincount(cats, minlength=4)
        worst = max(worst, float(np.abs(counts - n / 4.0).max()))
        # Labels must not move under monotone increasing transforms.
        for transformed in (2.0 * scores + 3.0, np.exp(scores), scores**3):
            same = assign_categories(transformed, quartile_boundaries(transformed))
            np.testing.assert_array_equal(same, cats)
    check(
        "label-balance",
        worst <= 1.0,
        f"max |count - n/4| = {worst:.2f} over 500 vectors, "
        "monotone-invariant under 3 transforms",
    )


def test_inference_independence(tmp_path, capsys):
    # Classification and pair heads are training-time scaffolding; wrecking
    # their weights in a checkpoint must not change predict output.
    ds = synthesize_dataset(96, 8, seed=2, rule="linear")
    tr, te = split_train_test(ds, 0.8, seed=2)
    config = ModelConfig(input_dim=8, embed_dim=32, hidden_dim=16)
    result = train(tr, te, config, TrainConfig(batch_size=8, epochs=5, seed=2))

    clean = tmp_path / "clean.lpfc"
    save_checkpoint(clean, result.final_checkpoint)
    ckpt = load_checkpoint(clean)
    touched = 0
    for name in ckpt.params:
        if name.startswith(("class_head.", "pair_head.")):
            ckpt.params[name] += 1.0
            touched += 1
    assert touched > 0
    wrecked = tmp_path / "wrecked.lpfc"
    save_checkpoint(wrecked, ckpt)

    feats = tmp_path / "features.lpff"
    from lpfiqa.dataset import write_feature_file

    write_feature_file(feats, te.features.astype(np.float32))
    run_cli(["predict", str(clean), str(feats)])
    out_clean = capsys.readouterr().out
    run_cli(["predict", str(wrecked), str(feats)])
    out_wrecked = capsys.readouterr().out
    check(
        "inference-independence",
        out_clean == out_wrecked,
        f"predict output bit-identical after perturbing {touched} "
        "auxiliary-head tensors",
    )


def test_determinism_and_persistence(tmp_path, capsys):
    data_dir = tmp_path / "data"
    run_cli(["synth", "--n", "64", "--dim", "8", "--seed", "3", "--out", str(data_dir)])
    train_args = [
        "train",
        str(data_dir / "dataset.lpfd"),
        "--epochs",
        "3",
        "--batch-size",
        "8",
        "--embed-dim",
        "12",
        "--hidden-dim",
        "6",
        "--seed",
        "3",
    ]
    run_a, run_b = tmp_path / "a", tmp_path / "b"
    run_cli(train_args + ["--out", str(run_a)])
    run_cli(train_args + ["--out", str(run_b)])
    capsys.readouterr()
    byte_identical = (run_a / "final.lpfc").read_bytes() == (
        run_b / "final.lpfc"
    ).read_bytes() and (run_a / "best.lpfc").read_bytes() == (
        run_b / "best.lpfc"
    ).read_bytes()

    ckpt = load_checkpoint(run_a / "final.lpfc")
    model = restore_model(ckpt)
    feats = read_feature_file(data_dir / "features.lpff")
    roundtrip = restore_model(deserialize_checkpoint(serialize_checkpoint(ckpt)))
    predictions_exact = np.array_equal(model.predict(feats), roundtrip.predict(feats))

    blob = bytearray((run_a / "final.lpfc").read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    corrupted = tmp_path / "corrupted.lpfc"
    corrupted.write_bytes(bytes(blob))
    try:
        load_checkpoint(corrupted)
        corruption_caught = False
    except ChecksumError:
        corruption_caught = True

    check(
        "determinism-persistence",
        byte_identical and predictions_exact and corruption_caught,
        f"same-seed runs byte-identical={byte_identical}, "
        f"round-trip predictions exact={predictions_exact}, "
        f"corruption detected={corruption_caught}",
    )


# ---------------------------------------------------------------------------
# convergence contracts (minutes each; full training runs)


def test_synthetic_convergence(tmp_path, capsys):
    # Full pipeline through the CLI with default hyperparameters. The bar is
    # test PLCC >= 0.95 and SROCC >= 0.93, reached at any epoch, on at least
    # 4 of 5 fixed seeds, each run under 2 minutes.
    per_seed = []
    for seed in (1, 2, 3, 4, 5):
        data_dir = tmp_path / f"data{seed}"
        run_cli(
            [
                "synth",
                "--n",
                "512",
                "--dim",
                "16",
                "--seed",
                str(seed),
                "--rule",
                "linear",
                "--out",
                str(data_dir),
            ]
        )
        run_dir = tmp_path / f"run{seed}"
        started = time.perf_counter()
        run_cli(
            [
                "train",
                str(data_dir / "dataset.lpfd"),
                "--seed",
                str(seed),
                "--out",
                str(run_dir),
            ]
        )
        elapsed = time.perf_counter() - started
        capsys.readouterr()
        curves = read_telemetry(run_dir / "telemetry.csv")
        per_seed.append(
            (
                seed,
                float(curves["test_plcc"].max()),
                float(curves["test_srocc"].max()),
                elapsed,
            )
        )
    hits = sum(1 for _, p, s, _ in per_seed if p >= 0.95 and s >= 0.93)
    in_budget = all(t < 120.0 for _, _, _, t in per_seed)
    detail = ", ".join(
        f"seed {seed}: plcc={p:.4f} srocc={s:.4f} {t:.0f}s" for seed, p, s, t in per_seed
    )
    check(
        "synthetic-convergence",
        hits >= 4 and in_budget,
        f"{hits}/5 seeds reached plcc>=0.95 and srocc>=0.93 ({detail})",
    )


def test_head_ablation():
    # Dropping both auxiliary heads must reduce the objective to the direct
    # regression term bit-exactly every step, and on the norm-rule data the
    # full model's mean test SROCC must not fall below the reduced model's.
    full_cfg = ModelConfig(input_dim=16)
    sp_cfg = ModelConfig(
        input_dim=16, class_head_enabled=False, pair_head_enabled=False
    )
    exact = True

    def on_batch(epoch, batch_index, class_loss, pair_loss, direct_loss, total):
        nonlocal exact
        exact = exact and class_loss == 0.0 and pair_loss == 0.0 and total == direct_loss

    full_scores, sp_scores = [], []
    for seed in (1, 2, 3, 4, 5):
        ds = synthesize_dataset(512, 16, seed, "norm")
        tr, te = split_train_test(ds, 0.8, seed=seed)
        cfg = TrainConfig(seed=seed, deterministic=False)
        full_scores.append(train(tr, te, full_cfg, cfg).records[-1].test_srocc)
        sp_scores.append(
            train(tr, te, sp_cfg, cfg, on_batch=on_batch).records[-1].test_srocc
        )
    mean_full = float(np.mean(full_scores))
    mean_sp = float(np.mean(sp_scores))
    check(
        "head-ablation",
        exact and mean_full >= mean_sp,
        f"reduced objective bit-exact={exact}, mean test srocc "
        f"full={mean_full:.4f} vs direct-only={mean_sp:.4f} over 5 seeds",
    )


def test_batch_size_stability():
    ds = synthesize_dataset(512, 16, seed=1, rule="linear")
    tr, te = split_train_test(ds, 0.8, seed=1)
    config = ModelConfig(input_dim=16)
    finals = {}
    for batch_size in (4, 8, 16, 32, 64):
        cfg = TrainConfig(batch_size=batch_size, seed=1, deterministic=False)
        finals[batch_size] = train(tr, te, config, cfg).records[-1].test_plcc
    spread = max(finals.values()) - min(finals.values())
    detail = ", ".join(f"bs{bs}={v:.4f}" for bs, v in finals.items())
    check(
        "batch-size-stability",
        spread <= 0.05,
        f"test plcc spread {spread:.4f} across batch sizes ({detail})",
    )


def test_cross_dataset_generalization(tmp_path, capsys):
    # A model trained on one linear-rule dataset is evaluated unchanged on a
    # fresh dataset drawn with a different seed; the bar is PLCC >= 0.9.
    import json

    train_data = tmp_path / "train-data"
    fresh_data = tmp_path / "fresh-data"
    run_cli(
        ["synth", "--n", "512", "--dim", "16", "--seed", "7", "--rule", "linear",
         "--out", str(train_data)]
    )
    run_cli(
        ["synth", "--n", "512", "--dim", "16", "--seed", "8", "--rule", "linear",
         "--out", str(fresh_data)]
    )
    run_dir = tmp_path / "run"
    run_cli(
        ["train", str(train_data / "dataset.lpfd"), "--seed", "7", "--out", str(run_dir)]
    )
    report_dir = tmp_path / "report"
    run_cli(
        [
            "eval",
            str(run_dir / "final.lpfc"),
            str(fresh_data / "dataset.lpfd"),
            "--split",
            "all",
            "--out",
            str(report_dir),
        ]
    )
    capsys.readouterr()
    payload = json.loads((report_dir / "report.json").read_text())
    check(
        "cross-dataset-generalization",
        payload["plcc"] >= 0.9,
        f"plcc={payload['plcc']:.4f} on an unseen same-rule dataset "
        f"(srocc={payload['srocc']:.4f})",
    )
