"""Acceptance gate: one test per shipping criterion, each printing a
single PASS/FAIL line (visible with pytest -s; pytest -v mirrors them)."""
import functools
import json
import sys

import numpy as np
import scipy.linalg

from eigencoin.classify import (ClassifierConfig, ClassifierModel, fit,
                                predict, predict_batch)
from eigencoin.cli import main as cli_main
from eigencoin.dataset import load_preset, synthesize, write_dataset
from eigencoin.distances import (amd, bhattacharyya, euclidean,
                                 per_vector_diag, shared_spectrum)
from eigencoin.eigenspace import build_manifold, train_mse, truncate
from eigencoin.evaluation import (ConfusionMatrix, alphas_from_counts,
                                  confusion, evaluate, per_class_rates,
                                  weighted_precision)
from eigencoin.baselines import haar_packet, wavelet_features
from eigencoin.imaging import (BinaryMask, GrayImage, StructuringElement,
                               connected_components, dilate, fill_holes)


def criterion(number, name):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            tag = f"[acceptance {number:02d}] {name}"
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"{tag}: FAIL", file=sys.stderr)
                raise
            print(f"{tag}: PASS")
        return wrapper
    return deco


@criterion(1, "weighted precision golden values")
def test_01_weighted_precision_golden_values():
    alphas = (2.0, 3.0, 1.0, 4.0)
    printed = weighted_precision((0.241, 0.312, 0.755, 0.0), alphas) * 100.0
    assert abs(printed - 21.73) < 1e-9
    assert abs(printed - 21.75) <= 0.05
    exact = weighted_precision((7 / 29, 5 / 16, 111 / 147, 0.0), alphas) * 100.0
    assert round(exact, 2) == 21.75
    corner_row = weighted_precision(
        (0.3793, 0.125, 0.7483, 0.0), alphas) * 100.0
    assert round(corner_row, 2) == 18.82


@criterion(2, "confusion matrix and rate consistency")
def test_02_confusion_rate_consistency():
    counts = np.array([
        [7, 2, 20, 0],
        [1, 5, 10, 0],
        [14, 21, 111, 1],
        [0, 0, 1, 0],
    ])
    cm = ConfusionMatrix(counts, np.zeros(4, dtype=int))
    assert tuple(cm.row_totals()) == (29, 16, 147, 1)
    rates = per_class_rates(cm) * 100.0
    assert tuple(round(r, 2) for r in rates) == (24.14, 31.25, 75.51, 0.0)


@criterion(3, "rank weights from class sizes")
def test_03_rank_weights_from_class_sizes():
    assert tuple(alphas_from_counts((51, 490, 99, 4))) == (3.0, 1.0, 2.0, 4.0)


@criterion(4, "small-sample eigenpairs match the direct decomposition")
def test_04_small_sample_eigenpairs_match_direct():
    rng = np.random.default_rng(404)
    for trial in range(50):
        m = int(rng.integers(2, 21))
        n = int(rng.integers(m, 65))
        x = rng.normal(size=(m, n))
        r = min(m - 1, n)
        man = build_manifold(list(x), k=r)

        centered = x - x.mean(axis=0)
        cov = centered.T @ centered / m
        vals, vecs = np.linalg.eigh(cov)
        order = np.argsort(-vals, kind="stable")
        vals = np.maximum(vals[order], 0.0)

        assert np.abs(man.eigenvalues - vals[:r]).max() <= 1e-8 * vals[0]
        angles = scipy.linalg.subspace_angles(man.basis.T, vecs[:, order[:r]])
        assert angles.max() < 1e-6


@criterion(5, "training reconstruction error curve")
def test_05_reconstruction_error_curve():
    rng = np.random.default_rng(505)
    for trial in range(10):
        m = int(rng.integers(3, 15))
        n = int(rng.integers(m, 40))
        x = rng.normal(size=(m, n))
        r = min(m - 1, n)
        man = build_manifold(list(x), k=r)
        curve = [train_mse(truncate(man, k), list(x)) for k in range(r + 1)]
        assert curve[0] == 1.0
        assert curve[-1] < 1e-9
        assert all(b <= a + 1e-12 for a, b in zip(curve, curve[1:]))


@criterion(6, "distance axioms and the Gaussian closed form")
def test_06_distance_axioms_and_closed_form():
    rng = np.random.default_rng(606)

    def dense_closed_form(mu1, cov1, mu2, cov2):
        pooled = 0.5 * (cov1 + cov2)
        d = mu1 - mu2
        maha = 0.125 * d @ np.linalg.solve(pooled, d)
        log_term = 0.5 * (np.linalg.slogdet(pooled)[1]
                          - 0.5 * (np.linalg.slogdet(cov1)[1]
                                   + np.linalg.slogdet(cov2)[1]))
        return maha + log_term, log_term

    n = 8
    spec = rng.random(n) + 0.1
    cases = {
        "shared": lambda a, b: bhattacharyya(a, b, shared_spectrum(spec)),
        "per_vector": lambda a, b: bhattacharyya(a, b, per_vector_diag()),
        "euclidean": euclidean,
        "amd_p1": lambda a, b: amd(a.reshape(2, 4), b.reshape(2, 4), p=1.0),
        "amd_p2": lambda a, b: amd(a.reshape(2, 4), b.reshape(2, 4), p=2.0),
    }
    for name, dist in cases.items():
        for _ in range(1000):
            a, b = rng.normal(size=(2, n))
            dab = dist(a, b)
            dba = dist(b, a)
            assert dab >= 0.0
            assert abs(dab - dba) <= 1e-12 * max(1.0, abs(dab))
            assert dist(a, a.copy()) == 0.0

    eps = shared_spectrum(spec).resolved_epsilon()
    dense = np.diag(spec + eps)
    for _ in range(200):
        a, b = rng.normal(size=(2, n))
        want, log_term = dense_closed_form(a, dense, b, dense)
        assert abs(log_term) < 1e-12
        got = bhattacharyya(a, b, shared_spectrum(spec))
        assert abs(got - want) <= 1e-10 * max(1.0, abs(want))


@criterion(7, "wavelet feature lengths and packet energy conservation")
def test_07_wavelet_packet_lengths_and_energy():
    rng = np.random.default_rng(707)
    img = GrayImage(rng.random((32, 32)))
    lengths = tuple(wavelet_features(img, level).values.shape[0]
                    for level in (1, 2, 3, 4))
    assert lengths == (5, 17, 65, 257)
    for _ in range(100):
        level = int(rng.integers(1, 4))
        px = rng.random((16, 16))
        bands = haar_packet(px, level)
        total = sum((b * b).sum() for b in bands)
        ref = (px * px).sum()
        assert abs(total - ref) <= 1e-9 * max(1.0, ref)


@criterion(8, "morphology agrees with brute-force oracles")
def test_08_morphology_matches_oracles():
    rng = np.random.default_rng(808)

    def flood_components(bits):
        h, w = bits.shape
        labels = np.zeros((h, w), dtype=int)
        nxt = 0
        for i in range(h):
            for j in range(w):
                if bits[i, j] and labels[i, j] == 0:
                    nxt += 1
                    stack = [(i, j)]
                    labels[i, j] = nxt
                    while stack:
                        a, b = stack.pop()
                        for da in (-1, 0, 1):
                            for db in (-1, 0, 1):
                                aa, bb = a + da, b + db
                                if (0 <= aa < h and 0 <= bb < w
                                        and bits[aa, bb] and labels[aa, bb] == 0):
                                    labels[aa, bb] = nxt
                                    stack.append((aa, bb))
        return labels, nxt

    def brute_dilate(bits, se):
        h, w = bits.shape
        out = np.zeros_like(bits)
        half = se.length // 2
        for i in range(h):
            for j in range(w):
                for d in range(-half, half + 1):
                    ii, jj = (i + d, j) if se.orientation == "vertical" else (i, j + d)
                    if 0 <= ii < h and 0 <= jj < w and bits[ii, jj]:
                        out[i, j] = True
                        break
        return out

    def border_fill(bits):
        h, w = bits.shape
        outside = np.zeros((h, w), dtype=bool)
        stack = [(i, j) for i in range(h) for j in range(w)
                 if (i in (0, h - 1) or j in (0, w - 1)) and not bits[i, j]]
        for seed in stack:
            outside[seed] = True
        while stack:
            i, j = stack.pop()
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ii, jj = i + di, j + dj
                if 0 <= ii < h and 0 <= jj < w and not bits[ii, jj] and not outside[ii, jj]:
                    outside[ii, jj] = True
                    stack.append((ii, jj))
        return bits | ~outside

    ses = (StructuringElement.vertical(3), StructuringElement.horizontal(3))
    for trial in range(1000):
        h = int(rng.integers(1, 17))
        w = int(rng.integers(1, 17))
        bits = rng.random((h, w)) < rng.uniform(0.2, 0.8)
        mask = BinaryMask(bits)

        comps = connected_components(mask)
        labels, count = flood_components(bits)
        assert len(comps) == count
        covered = 0
        for c in comps:
            rows, cols = c.pixels[:, 0], c.pixels[:, 1]
            ids = set(labels[rows, cols].tolist())
            assert len(ids) == 1
            assert c.area == int((labels == ids.pop()).sum())
            covered += c.area
        assert covered == int(bits.sum())

        se = ses[trial % 2]
        assert (dilate(mask, se).bits == brute_dilate(bits, se)).all()
        assert (fill_holes(mask).bits == border_fill(bits)).all()


@criterion(9, "end-to-end separability and chance-level control")
def test_09_end_to_end_separability(coin_dataset):
    model = fit(coin_dataset, ClassifierConfig(method="eigencoin", k=8))
    test_images, truth = coin_dataset.test_set()
    report = evaluate(model, test_images, truth,
                      class_counts=coin_dataset.class_counts())
    assert report.overall == 1.0

    # control: gallery labels drawn uniformly at random; accuracy collapses
    # to chance for a 4-class problem
    accs = []
    for s in range(20):
        r = np.random.default_rng([12345, s])
        scrambled = ClassifierModel(
            config=model.config, class_names=model.class_names,
            gallery=model.gallery,
            gallery_labels=r.integers(1, 5, size=model.gallery_labels.shape[0]),
            manifold=model.manifold)
        preds = predict_batch(scrambled, test_images)
        assert all(p.failure is None for p in preds)
        accs.append(np.mean([p.label == t for p, t in zip(preds, truth)]))
    mean_acc = float(np.mean(accs))
    assert abs(mean_acc - 0.25) <= 0.15


@criterion(10, "training images retrieve themselves under every method")
def test_10_self_retrieval_all_methods(coin_dataset):
    configs = (
        ClassifierConfig(method="eigencoin", k=8),
        ClassifierConfig(method="bdpca", k_rows=6, k_cols=6),
        ClassifierConfig(method="wavelet"),
        ClassifierConfig(method="harris"),
    )
    train_images, train_labels = coin_dataset.train_set()
    for cfg in configs:
        model = fit(coin_dataset, cfg)
        for img, label in zip(train_images, train_labels):
            pred = predict(model, img)
            assert pred.label == int(label), cfg.method
            assert pred.best_distance < 1e-9, cfg.method


@criterion(11, "reports and models are byte-deterministic")
def test_11_reports_are_deterministic(coin_dataset, tmp_path):
    data = tmp_path / "data"
    write_dataset(coin_dataset, data, fraction=0.7, seed=0)
    manifest = data / "manifest.json"
    outputs = []
    for run in ("one", "two"):
        out = tmp_path / run
        rc = cli_main(["train", "--manifest", str(manifest), "--out", str(out),
                       "--k", "8"])
        assert rc == 0
        rc = cli_main(["eval", "--model", str(out / "model.ecm"),
                       "--manifest", str(manifest), "--out", str(out)])
        assert rc == 0
        outputs.append(out)
    one, two = outputs
    for name in ("model.ecm", "report.json", "confusion.csv"):
        assert (one / name).read_bytes() == (two / name).read_bytes(), name
