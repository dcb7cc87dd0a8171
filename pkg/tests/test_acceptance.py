"""Acceptance criteria, one test per criterion.

Each test records a PASS / FAIL / SKIP line (shown in the terminal summary)
before asserting, so a red criterion still reports what it measured.

Criteria 6-8 need the official SemEval-2014 Task 4 files; point
``ABSA_DATA_DIR`` at a directory holding them (see README). Criterion 7
also needs ``ABSA_RUN_TABLE2=1`` because it trains 60 full-size models.
"""
import os
import time
from pathlib import Path

import numpy as np
import pytest

from aspectcnn import model as M
from aspectcnn import synthetic as S
from aspectcnn import tensor as T
from aspectcnn import train as train_mod
from aspectcnn.data import EncodedInstance
from aspectcnn.train import TrainConfig, Trainer, evaluate, train

from conftest import record

# -- shared settings ----------------------------------------------------------------

# Synthetic corpora use 50-d vectors: a default-width PF/PG extractor at k=300 has
# ~225M parameters, more than fits in memory next to its Adam moments.
SYNTH_DIM = 50

# Criterion 3: templated two-aspect pairs, 200 train / 50 test, disjoint templates.
CONTRASTIVE = dict(seed=0, n_train=200, n_dev=50, n_test=50, dim=SYNTH_DIM, n_aspects=3, polarity=4.0)
CONTRASTIVE_MAPS = 50
CONTRASTIVE_EPOCHS = 40

TABLE1 = {
    "Laptop-Train": (767, 373, 673), "Laptop-Dev": (220, 87, 193), "Laptop-Test": (341, 169, 128),
    "Restaurant-Train": (1886, 531, 685), "Restaurant-Dev": (278, 102, 120),
    "Restaurant-Test": (728, 196, 196),
}
# (laptop 3-way, laptop binary, restaurant 3-way, restaurant binary)
TABLE2 = {"pf": (70.06, 86.35, 79.20, 90.15), "pg": (69.12, 86.14, 78.93, 90.58),
          "vanilla": (68.65, 85.50, 77.95, 89.50)}


def finish(criterion, ok, detail):
    record(criterion, "PASS" if ok else "FAIL", detail)
    assert ok, detail


def skip(criterion, reason):
    record(criterion, "SKIP", reason)
    pytest.skip(reason)


# -- 1. gradient correctness ----------------------------------------------------------


def test_criterion_1_gradient_check():
    t0 = time.perf_counter()
    worst = {}
    for kind in M.KINDS:
        for seed in range(5):
            rep = S.tiny_grad_check(kind, seed)  # k=8, 2 maps/width, n=12, m=2, 3 classes, float64
            worst[kind] = max(worst.get(kind, 0.0), rep.max_error)
    elapsed = time.perf_counter() - t0
    ok = all(e < 1e-4 for e in worst.values()) and elapsed < 60
    finish(1, ok, "max rel err " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
           + f" over 5 seeds (tol 1e-4); {elapsed:.1f}s (limit 60s)")


# -- 2. shape ledger ----------------------------------------------------------------


def test_criterion_2_shape_ledger():
    problems = []
    k = 300
    rng = np.random.default_rng(0)
    table = rng.normal(size=(50, k)).astype(np.float32)
    table[0] = 0
    inst = EncodedInstance(rng.integers(1, 50, 9), 2, 2, 0)

    vanilla = M.init_params(M.ModelConfig("vanilla"), T.RngStream(0))
    theta_g = M.general_cnn_forward(table[inst.token_ids], vanilla)
    if theta_g.shape != (400,):
        problems.append(f"|theta_g|={theta_g.shape}")
    # Zero-initialized (lazily allocated) single-precision parameters at full default size.
    for kind, width in (("pf", 800), ("pg", 400)):
        params = M.zero_params(M.ModelConfig(kind), dtype=np.float32)
        fwd = M.pf_forward if kind == "pf" else M.pg_forward
        got = fwd(inst, params, table).shape
        if got != (width,) or params.config.feature_dim != width:
            problems.append(f"{kind} |theta|={got}")
        for h in (1, 2, 3, 4):
            for slot in (0, 24, 25, 50, 75, 99):
                shape = M.aspect_filter_matrix(table[inst.aspect_ids], params, h, slot).shape
                if shape != (h, k):
                    problems.append(f"{kind} theta_t h={h} slot={slot}: {shape}")
        del params
    cfg = M.ModelConfig("vanilla")
    for n in range(4, 41):
        sent = rng.normal(size=(n, k))
        batch = M.make_batch([sent], [sent[:1]], cfg)
        for h in (1, 2, 3, 4):
            fmap = T.feature_map(sent, rng.normal(size=(h, k)), 0.1)
            if fmap.shape != (n - h + 1,) or batch.sent_mask[h].sum() != n - h + 1:
                problems.append(f"n={n} h={h}")
    finish(2, not problems,
           "theta_g=400, PF=800, PG=400, theta_t=h_s x 300, map length n-h+1 for n=4..40"
           if not problems else "; ".join(problems[:5]))


# -- 3. aspect-blindness and contrastive pairs ---------------------------------------------


def test_criterion_3_contrastive():
    t0 = time.perf_counter()
    tr, dev, te, _, table = S.contrastive_corpus(**CONTRASTIVE)
    results, identical = {}, True
    for kind in M.KINDS:
        cfg = TrainConfig(model=kind, task="binary", maps_per_width=CONTRASTIVE_MAPS,
                          max_epochs=CONTRASTIVE_EPOCHS, seed=0)
        trainer, report = train(cfg, table, tr, dev, te)
        results[kind] = report.test_accuracy
        if kind == "vanilla":
            for a, b in zip(te[::2], te[1::2]):
                pa = M.predict_proba([a], trainer.best_params, trainer.table)
                pb = M.predict_proba([b], trainer.best_params, trainer.table)
                identical &= pa.tobytes() == pb.tobytes()
    elapsed = time.perf_counter() - t0
    ok = (identical and results["vanilla"] == 0.5 and results["pf"] >= 0.9 and results["pg"] >= 0.9
          and elapsed < 300)
    finish(3, ok, f"vanilla pair probs bit-identical={identical}; test acc vanilla={results['vanilla']:.3f} "
                  f"(need exactly 0.5), pf={results['pf']:.3f}, pg={results['pg']:.3f} (need >=0.9); "
                  f"{elapsed:.0f}s (limit 300s)")


# -- 4. overfit capacity ----------------------------------------------------------------


def test_criterion_4_overfit():
    insts, table = S.random_corpus(n=24, n_classes=3, dim=SYNTH_DIM, seed=0)
    reached = {}
    for kind in ("pf", "pg"):
        # Default hyperparameters; no dev set, so every epoch runs.
        trainer = Trainer(TrainConfig(model=kind, seed=0, max_epochs=300), table, insts, [])
        reached[kind] = None
        for epoch in range(1, 301):
            trainer.epoch()
            if evaluate(trainer.params, insts, trainer.table) == 1.0:
                reached[kind] = epoch
                break
    ok = all(v is not None for v in reached.values())
    finish(4, ok, ", ".join(f"{k}: 100% train acc at epoch {v}" if v else f"{k}: not reached in 300"
                            for k, v in reached.items()))


# -- 5. schedule conformance ---------------------------------------------------------------


def documented_lr_rule(losses, lr, window=3):
    """Per-epoch learning rates: after epoch 1+j*window, halve when the last window
    failed to beat the best loss seen before it."""
    out = []
    for n in range(1, len(losses) + 1):
        out.append(lr)
        if n > window and (n - 1) % window == 0 and min(losses[n - window:n]) >= min(losses[:n - window]):
            lr /= 2
    return out, lr


def scripted_run(monkeypatch, train_losses, dev_losses, patience=5):
    insts, table = S.random_corpus(n=4, dim=4, seed=0)
    cfg = TrainConfig(model="vanilla", maps_per_width=1, patience=patience, max_epochs=len(train_losses))
    trainer = Trainer(cfg, table, insts, insts)
    tl, dl = iter(train_losses), iter(dev_losses)

    def run_epoch():
        for arr in trainer.params.arrays.values():
            arr[...] = trainer.epoch_count + 1  # parameters remember which epoch produced them
        return next(tl)

    trainer.run_epoch = run_epoch
    monkeypatch.setattr(train_mod, "dataset_loss", lambda *a, **k: (next(dl), 0.0))
    return trainer, trainer.fit()


def test_criterion_5_schedule(monkeypatch):
    problems = []
    # Hand-traced sequences.
    _, rep = scripted_run(monkeypatch, [1.0] * 4, [1.0, 0.9, 0.8, 0.7])
    if rep.learning_rates != [0.001] * 4:
        problems.append(f"flat-4 lrs {rep.learning_rates}")
    tr, rep = scripted_run(monkeypatch, [1.0] * 7, [1.0 - 0.1 * i for i in range(7)], patience=10)
    if rep.learning_rates != [0.001] * 4 + [0.0005] * 3 or tr.adam.lr != 0.00025:
        problems.append(f"flat-7 lrs {rep.learning_rates} -> {tr.adam.lr}")
    tr, rep = scripted_run(monkeypatch, list(np.linspace(2, 1, 20)), [3.0, 2.0, 1.0] + [1.0] * 17)
    restored = {float(a.flat[0]) for a in tr.best_params.arrays.values()}
    if len(rep.epochs) != 8 or rep.best_epoch != 3 or restored != {3.0} or not rep.stopped_early:
        problems.append(f"early stop: ran {len(rep.epochs)}, best {rep.best_epoch}, restored {restored}")
    # Random scripted sequences against the documented rule.
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(4, 30))
        losses = list(np.round(rng.uniform(0, 1, n) + np.linspace(1, 0, n) * rng.uniform(0, 2), 2))
        _, rep = scripted_run(monkeypatch, losses, list(rng.uniform(0, 1, n)), patience=n)
        lrs = rep.learning_rates
        want, _ = documented_lr_rule(losses, 0.001)
        steps_ok = all(b == a or b == a / 2 for a, b in zip(lrs, lrs[1:]))
        if lrs != want or not steps_ok:
            problems.append(f"losses {losses}: lrs {lrs} != {want}")
            break
        dev = [e["dev_loss"] for e in rep.epochs]
        if rep.best_epoch != int(np.argmin(dev)) + 1:
            problems.append(f"best epoch {rep.best_epoch} for dev {dev}")
            break
    finish(5, not problems, "hand-traced + 100 random scripted runs follow the halving rule; "
                            "early stop at epoch 8 restores epoch 3" if not problems else "; ".join(problems))


# -- 6-8. official data ------------------------------------------------------------------------


def official_data():
    root = os.environ.get("ABSA_DATA_DIR")
    if not root:
        return None, "ABSA_DATA_DIR not set (official SemEval-2014 files are not bundled)"
    root = Path(root)
    names = {"laptop_train": "Laptop_Train_v2.xml", "laptop_test": "Laptops_Test_Gold.xml",
             "restaurant_train": "Restaurants_Train_v2.xml", "restaurant_test": "Restaurants_Test_Gold.xml",
             "laptop_dev": "laptop_dev_ids.txt", "restaurant_dev": "restaurant_dev_ids.txt"}
    paths = {k: root / v for k, v in names.items()}
    missing = [str(p) for p in paths.values() if not p.is_file()]
    if missing:
        return None, "missing " + ", ".join(missing)
    glove = sorted(root.glob("glove*300d*.txt"))
    paths["glove"] = glove[0] if glove else None
    return paths, ""


def prepared_split(paths, domain):
    from aspectcnn import data as D

    train_all = D.align_all(D.parse_semeval(paths[f"{domain}_train"]).instances)
    test = D.align_all(D.parse_semeval(paths[f"{domain}_test"]).instances)
    rest, dev, _ = D.apply_dev_split(train_all, D.read_split_ids(paths[f"{domain}_dev"]))
    return D.DatasetSplit(rest, dev, test)


def test_criterion_6_dataset_statistics():
    paths, why = official_data()
    if paths is None:
        skip(6, why)
    from aspectcnn import data as D

    got = {}
    for domain, label in (("laptop", "Laptop"), ("restaurant", "Restaurant")):
        for row, counts in D.stats(prepared_split(paths, domain), label).items():
            got[row] = (counts["positive"], counts["neutral"], counts["negative"])
    bad = {r: (got.get(r), want) for r, want in TABLE1.items() if got.get(r) != want}
    finish(6, not bad, "all six rows match exactly" if not bad else f"mismatches (got, want): {bad}")


def test_criterion_7_table2():
    paths, why = official_data()
    if paths is None:
        skip(7, why)
    if os.environ.get("ABSA_RUN_TABLE2") != "1":
        skip(7, "set ABSA_RUN_TABLE2=1 to train the 60 full-size models")
    if paths["glove"] is None:
        skip(7, "no glove*300d*.txt in ABSA_DATA_DIR")
    from aspectcnn import data as D
    from aspectcnn.embeddings import Vocabulary, load_pretrained

    misses = []
    for col, (domain, task) in enumerate([("laptop", "three_way"), ("laptop", "binary"),
                                          ("restaurant", "three_way"), ("restaurant", "binary")]):
        split = prepared_split(paths, domain)
        vocab = Vocabulary.build(i.tokens for i in split.train + split.dev + split.test)
        table = load_pretrained(paths["glove"], vocab, T.RngStream(0, "oov"))
        split = D.to_task(split, task)
        enc = [D.encode_instances(x, vocab, task) for x in (split.train, split.dev, split.test)]
        for kind, targets in TABLE2.items():
            accs = [train(TrainConfig(model=kind, task=task, seed=s), table, *enc)[1].test_accuracy
                    for s in range(5)]
            mean = 100 * float(np.mean(accs))
            if abs(mean - targets[col]) > 2.0:
                misses.append(f"{kind} {domain} {task}: {mean:.2f} vs {targets[col]}")
    finish(7, not misses, "all 12 means within 2.0 points" if not misses else "; ".join(misses))


def test_criterion_8_majority_agreement():
    paths, why = official_data()
    if paths is None:
        skip(8, why)
    from aspectcnn import data as D

    test = D.align_all(D.parse_semeval(paths["restaurant_test"]).instances)
    out = D.majority_agreement(test)
    ok = abs(out["agree"] - 1034) <= 5
    finish(8, ok, f"{out['agree']} of {out['total']} agree (target 1034 +-5 of a reported 1117 total; "
                  f"{out['tied']} instances in tied sentences)")


# -- 9. determinism --------------------------------------------------------------------------


def test_criterion_9_determinism(tmp_path):
    tr, dev, te, _, table = S.contrastive_corpus(seed=1, n_train=20, n_dev=5, n_test=5, dim=12)
    same = {}
    for kind in M.KINDS:
        blobs = []
        for run in range(2):
            cfg = TrainConfig(model=kind, task="binary", maps_per_width=4, max_epochs=3, seed=7)
            trainer, report = train(cfg, table, tr, dev, te)
            path = tmp_path / f"{kind}{run}.bin"
            trainer.checkpoint("v", "e").save(path)
            blobs.append((report.to_json(), path.read_bytes()))
        same[kind] = blobs[0] == blobs[1]
    finish(9, all(same.values()), "reports and checkpoints byte-identical across reruns: "
                                  + ", ".join(f"{k}={v}" for k, v in same.items()))
