"""Train and freeze the desk-scale fixtures: checkpoints and PNG datasets.

Run from the repository root:

    python3 scripts/make_fixtures.py           # full build + verification
    python3 scripts/make_fixtures.py --scan    # latent-dim scan table only

Produces
    src/fmrbench/fixtures/checkpoints/reference-ae.npz
    src/fmrbench/fixtures/checkpoints/surrogate-oracle.npz
    src/fmrbench/fixtures/checkpoints/toy-convnet.npz
    src/fmrbench/fixtures/checkpoints/toy-mlp.npz
    src/fmrbench/fixtures/checkpoints/toy-mlp-pgd.npz
    data/glyphs-eval-1000/     100 PNGs per class (evaluation set)
    data/glyphs-mini-100/      10 PNGs per class (fast harness checks)

and then verifies, using the frozen on-disk artifacts exactly as the test
suite will load them, that
    1. the surrogate oracle classifies every eval reconstruction correctly,
    2. the step-0.001 / budget-50 run reaches VR 100 with FMR < 100,
    3. every PERTURBED final re-verifies against the oracle,
    4. 8-bit PNG quantization flips no evaluated-model prediction on the
       perturbed finals.
Any gate failure aborts with a nonzero exit so a bad freeze cannot land.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from fmrbench.fixtures import CHECKPOINT_DIR
from fmrbench.fixtures.glyphs import CLASS_NAMES, make_dataset
from fmrbench.fixtures.training import (
    GLYPH_NORMALIZATION,
    model_accuracy,
    train_convnet,
    train_mlp,
    train_mlp_pgd,
)
from fmrbench.generators import LinearAutoencoderGenerator, fit_linear_autoencoder
from fmrbench.harness.data import load_dataset, write_dataset
from fmrbench.metrics import compute_report
from fmrbench.models import load_model, save_model
from fmrbench.oracles import LabelSet, SurrogateOracle
from fmrbench.perturbation import (
    PERTURBED,
    LabeledSample,
    PerturbationConfig,
    perturb_sample,
)

# Frozen build parameters. Every RNG below is seeded, so re-running this
# script reproduces the checkpoints and datasets bit for bit.
LATENT_DIM = 48
AE_TRAIN = dict(n_per_class=500, seed=100)
ORACLE_TRAIN = dict(n_per_class=800, seed=200)
MODEL_TRAIN = dict(n_per_class=500, seed=300)
CONVNET_EPOCHS = 30
EVAL_SET = dict(n_per_class=100, seed=44)
MINI_SET = dict(n_per_class=10, seed=43)
ORACLE_JITTER_SIGMAS = (0.005, 0.02)
ORACLE_SEED = 7
CONVNET_SEED = 3
MLP_SEED = 5
PGD_SEED = 9

EVAL_DIR = ROOT / "data" / "glyphs-eval-1000"
MINI_DIR = ROOT / "data" / "glyphs-mini-100"
DIR_CLASS_NAMES = tuple(f"{i}-{name}" for i, name in enumerate(CLASS_NAMES))

RUN_CONFIG = PerturbationConfig(
    budget=50, step_size=0.001, normalization=GLYPH_NORMALIZATION, seed=0
)
# The export run uses a 10x step so perturbed finals land well clear of the
# evaluated model's decision boundaries; 8-bit quantization then cannot
# re-classify any of them, which the transfer path depends on.
EXPORT_RUN_CONFIG = PerturbationConfig(
    budget=50, step_size=0.01, normalization=GLYPH_NORMALIZATION, seed=0
)


def build_oracle_training_set(raw, generator):
    """Raw glyphs plus their reconstructions and latent-jittered decodes.

    The oracle has to stay correct along the whole ascent tube around each
    reconstruction, so it trains on decode(z), decode(z + small noise) and
    the raw images themselves.
    """
    rng = np.random.default_rng(ORACLE_SEED)
    out = list(raw)
    for s in raw:
        z = generator.encode(s.image)
        out.append(
            LabeledSample(
                image=generator.decode(z), label=s.label, id=f"{s.id}/recon"
            )
        )
        for j, sigma in enumerate(ORACLE_JITTER_SIGMAS):
            zj = z + rng.normal(0.0, sigma, z.shape)
            out.append(
                LabeledSample(
                    image=generator.decode(zj),
                    label=s.label,
                    id=f"{s.id}/jitter{j}",
                )
            )
    return out


def scan_latent_dims(dims):
    """Print, per candidate latent dim, the eval-set accuracy of a freshly
    trained convnet on originals vs reconstructions, and the net number of
    correct-to-incorrect flips the reconstruction alone causes."""
    ae_train = make_dataset(**AE_TRAIN)
    model_train = make_dataset(**MODEL_TRAIN)
    eval_set = make_dataset(**EVAL_SET)
    images = np.stack([s.image for s in ae_train])
    convnet = train_convnet(model_train, seed=CONVNET_SEED, epochs=CONVNET_EPOCHS)
    print(f"convnet train accuracy: {convnet.meta['train_accuracy']:.4f}")
    print("dim  sa_raw  sa_recon  c->i  i->c  max_mse")
    for k in dims:
        gen = fit_linear_autoencoder(images, k)
        raw_ok, recon_ok, c2i, i2c = 0, 0, 0, 0
        for s in eval_set:
            recon = gen.decode(gen.encode(s.image))
            pr = int(np.argmax(convnet.predict(s.image))) == s.label
            pc = int(np.argmax(convnet.predict(recon))) == s.label
            raw_ok += pr
            recon_ok += pc
            c2i += pr and not pc
            i2c += pc and not pr
        n = len(eval_set)
        print(
            f"{k:<4d} {100 * raw_ok / n:<7.2f} {100 * recon_ok / n:<9.2f} "
            f"{c2i:<5d} {i2c:<5d} {gen.meta['max_train_mse']:.5f}"
        )


def _quantize(image: np.ndarray) -> np.ndarray:
    """Exactly the 8-bit PNG round trip save_image + load_image performs."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def scan_eval_seeds(seeds):
    """Train the frozen models once, then report every gate per eval seed.

    The evaluation set is regenerated per seed and quantized in memory with
    the identical arithmetic of a PNG round trip, so the table matches what
    a full freeze with that seed would verify.
    """
    ae_train = make_dataset(**AE_TRAIN)
    images = np.stack([s.image for s in ae_train])
    generator = fit_linear_autoencoder(images, LATENT_DIM)
    oracle_train = build_oracle_training_set(
        make_dataset(**ORACLE_TRAIN), generator
    )
    oracle_model = train_mlp(oracle_train, hidden=256, epochs=60, seed=ORACLE_SEED)
    oracle = SurrogateOracle(
        classifier=oracle_model,
        label_set=LabelSet(names=DIR_CLASS_NAMES),
    )
    convnet = train_convnet(
        make_dataset(**MODEL_TRAIN), seed=CONVNET_SEED, epochs=CONVNET_EPOCHS
    )
    print("seed  recon_wrong  SA     PA     VR     FMR    reverify  flips")
    for seed in seeds:
        eval_set = [
            LabeledSample(image=_quantize(s.image), label=s.label, id=s.id)
            for s in make_dataset(n_per_class=EVAL_SET["n_per_class"], seed=seed)
        ]
        recon_wrong = sum(
            1
            for s in eval_set
            if not oracle.verify(generator.decode(generator.encode(s.image)), s.label)
        )
        outcomes = [
            perturb_sample(s, convnet, generator, oracle, RUN_CONFIG)
            for s in eval_set
        ]
        report = compute_report(convnet, eval_set, outcomes)
        reverify = sum(
            1
            for o in outcomes
            if o.status == PERTURBED and not oracle.verify(o.final_image, o.label)
        )
        flips = sum(
            1
            for o in outcomes
            if o.status == PERTURBED
            and int(np.argmax(convnet.predict(o.final_image)))
            != int(np.argmax(convnet.predict(_quantize(o.final_image))))
        )
        r = report.rounded
        print(
            f"{seed:<5d} {recon_wrong:<12d} {r['standard_accuracy']:<6} "
            f"{r['perturbed_accuracy']:<6} {r['validation_rate']:<6} "
            f"{r['fmr']:<6} {reverify:<9d} {flips}"
        )


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--scan", action="store_true",
                        help="print the latent-dim scan table and exit")
    parser.add_argument("--eval-seed-scan", type=str, default=None,
                        help="comma-separated eval seeds to gate-check")
    args = parser.parse_args()
    if args.scan:
        scan_latent_dims([96, 64, 48, 32, 24, 16])
        return 0
    if args.eval_seed_scan:
        scan_eval_seeds([int(v) for v in args.eval_seed_scan.split(",")])
        return 0

    t0 = time.time()
    CHECKPOINT_DIR.mkdir(parents=True, exist_ok=True)

    print("== datasets ==")
    ae_train = make_dataset(**AE_TRAIN)
    oracle_train_raw = make_dataset(**ORACLE_TRAIN)
    model_train = make_dataset(**MODEL_TRAIN)
    eval_set = make_dataset(**EVAL_SET)
    mini_set = make_dataset(**MINI_SET)
    write_dataset(eval_set, DIR_CLASS_NAMES, EVAL_DIR)
    write_dataset(mini_set, DIR_CLASS_NAMES, MINI_DIR)
    print(f"wrote {len(eval_set)} eval PNGs -> {EVAL_DIR}")
    print(f"wrote {len(mini_set)} mini PNGs -> {MINI_DIR}")

    print("== reference autoencoder ==")
    images = np.stack([s.image for s in ae_train])
    generator = fit_linear_autoencoder(
        images, LATENT_DIM, meta={"train_seed": AE_TRAIN["seed"],
              "n_per_class": AE_TRAIN["n_per_class"]}
    )
    generator.save(CHECKPOINT_DIR / "reference-ae.npz")
    print(f"latent_dim={LATENT_DIM} "
          f"max_train_mse={generator.meta['max_train_mse']:.5f} "
          f"mean_train_mse={generator.meta['mean_train_mse']:.5f}")

    print("== surrogate oracle ==")
    oracle_train = build_oracle_training_set(oracle_train_raw, generator)
    oracle_model = train_mlp(
        oracle_train,
        hidden=256,
        epochs=60,
        seed=ORACLE_SEED,
        meta={"role": "surrogate-oracle", "train_seed": ORACLE_TRAIN["seed"],
              "n_per_class": ORACLE_TRAIN["n_per_class"]},
    )
    save_model(oracle_model, CHECKPOINT_DIR / "surrogate-oracle.npz")
    print(f"oracle train accuracy: {oracle_model.meta['train_accuracy']:.4f} "
          f"over {len(oracle_train)} images")

    print("== evaluated models ==")
    convnet = train_convnet(
        model_train, seed=CONVNET_SEED, epochs=CONVNET_EPOCHS,
        meta={"role": "evaluated", "train_seed": MODEL_TRAIN["seed"],
              "n_per_class": MODEL_TRAIN["n_per_class"]},
    )
    save_model(convnet, CHECKPOINT_DIR / "toy-convnet.npz")
    print(f"toy-convnet train accuracy: {convnet.meta['train_accuracy']:.4f}")
    mlp = train_mlp(
        model_train, seed=MLP_SEED,
        meta={"role": "evaluated", "train_seed": MODEL_TRAIN["seed"],
              "n_per_class": MODEL_TRAIN["n_per_class"]},
    )
    save_model(mlp, CHECKPOINT_DIR / "toy-mlp.npz")
    print(f"toy-mlp train accuracy: {mlp.meta['train_accuracy']:.4f}")
    pgd = train_mlp_pgd(
        model_train, seed=PGD_SEED,
        meta={"role": "evaluated", "train_seed": MODEL_TRAIN["seed"],
              "n_per_class": MODEL_TRAIN["n_per_class"]},
    )
    save_model(pgd, CHECKPOINT_DIR / "toy-mlp-pgd.npz")
    print(f"toy-mlp-pgd train accuracy: {pgd.meta['train_accuracy']:.4f}")

    print("== verification (from frozen artifacts) ==")
    dataset = load_dataset(EVAL_DIR, "class-dirs")
    generator = LinearAutoencoderGenerator.load(CHECKPOINT_DIR / "reference-ae.npz")
    convnet = load_model(CHECKPOINT_DIR / "toy-convnet.npz")
    oracle = SurrogateOracle(
        classifier=load_model(CHECKPOINT_DIR / "surrogate-oracle.npz"),
        label_set=LabelSet(names=dataset.class_names),
    )

    recon_wrong = sum(
        1
        for s in dataset.samples
        if not oracle.verify(generator.decode(generator.encode(s.image)), s.label)
    )
    print(f"oracle wrong on eval reconstructions: {recon_wrong} / {len(dataset)}")

    outcomes = []
    for s in dataset.samples:
        outcomes.append(
            perturb_sample(s, convnet, generator, oracle, RUN_CONFIG)
        )
    report = compute_report(convnet, dataset.samples, outcomes, dataset.class_names)
    r = report.rounded
    print(f"toy-convnet eval: SA={r['standard_accuracy']} "
          f"PA={r['perturbed_accuracy']} VR={r['validation_rate']} "
          f"FMR={r['fmr']}")

    reverify_fail = sum(
        1
        for o in outcomes
        if o.status == PERTURBED and not oracle.verify(o.final_image, o.label)
    )
    print(f"perturbed finals failing oracle re-verification: {reverify_fail}")

    outcomes_b = [
        perturb_sample(s, convnet, generator, oracle, EXPORT_RUN_CONFIG)
        for s in dataset.samples
    ]
    report_b = compute_report(
        convnet, dataset.samples, outcomes_b, dataset.class_names
    )
    rb = report_b.rounded
    print(f"export run (step 0.01): SA={rb['standard_accuracy']} "
          f"PA={rb['perturbed_accuracy']} VR={rb['validation_rate']} "
          f"FMR={rb['fmr']}")
    reverify_b = sum(
        1
        for o in outcomes_b
        if o.status == PERTURBED and not oracle.verify(o.final_image, o.label)
    )
    quant_flips = sum(
        1
        for o in outcomes_b
        if o.status == PERTURBED
        and int(np.argmax(convnet.predict(o.final_image)))
        != int(np.argmax(convnet.predict(_quantize(o.final_image))))
    )
    print(f"export run: re-verify failures {reverify_b}, "
          f"quantization prediction flips {quant_flips}")

    for name in ("toy-mlp", "toy-mlp-pgd"):
        m = load_model(CHECKPOINT_DIR / f"{name}.npz")
        acc = model_accuracy(m, list(dataset.samples))
        print(f"{name} eval accuracy: {acc:.4f}")

    gates = {
        "oracle perfect on eval reconstructions": recon_wrong == 0,
        "VR == 100": report.validation_rate == 100.0,
        "FMR < 100": report.fmr is not None and report.fmr < 100.0,
        "PERTURBED finals re-verify": reverify_fail == 0,
        "export run has perturbed finals and defined FMR": (
            report_b.fmr is not None
        ),
        "export run finals re-verify": reverify_b == 0,
        "export run free of quantization flips": quant_flips == 0,
    }
    failed = [name for name, ok in gates.items() if not ok]
    for name, ok in gates.items():
        print(f"[{'ok' if ok else 'FAIL'}] {name}")
    print(f"total time: {time.time() - t0:.1f}s")
    if failed:
        print("freeze rejected: " + "; ".join(failed))
        return 1
    print("freeze accepted")
    return 0


if __name__ == "__main__":
    sys.exit(main())
