"""Experiment pipeline behind the CLI verbs.

Every command works on a run directory (``config.out``) with one
subdirectory per seed; file names are fixed so that the stages compose
without extra configuration::

    seed{s}/train.mds test.mds           gen-data
    seed{s}/model.mwt                    train
    seed{s}/attacked.mwt attack.json     attack (+ targets.mds, reverse.mwt or codec.mwt)
    seed{s}/mitigated.mwt                mitigate
    seed{s}/recon.mds                    extract

Each command returns its report dict and writes ``{verb}_report.json`` in the
run directory.
"""
from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import __version__
from ._accel import backend
from .attacks import (
    DecCodec,
    ReverseParams,
    TransposeConfig,
    dec_attack_export,
    dec_reconstruct,
    target_keys,
    transpose_reconstruct,
    transpose_train,
)
from .config import ExperimentConfig
from .data import Dataset, SynthSpec, load_dataset, save_dataset, synth_generate
from .errors import ArgumentError, ParseError, UndefinedAUCError
from .metrics import SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW, bit_error_rate, leakage
from .nn import init_network
from .sanitize import mitigate
from .stego import QuantizerConfig
from .training import evaluate, fresh_classifier, train_classifier
from .weights_io import ArchiveEntry, WeightArchive, read_archive, to_archive, to_network, write_archive

REPORT_FORMAT_VERSION = 1
TIMING_KEYS = ("timings",)


# --- files -----------------------------------------------------------------

def seed_dir(cfg: ExperimentConfig, seed, create=False):
    path = os.path.join(cfg.out, f"seed{seed}")
    if create:
        os.makedirs(path, exist_ok=True)
    return path


def _path(cfg, seed, name):
    return os.path.join(seed_dir(cfg, seed), name)


def _need(path, hint):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{path} not found; run `{hint}` first")
    return path


def _load_data(cfg, seed):
    train = load_dataset(_need(_path(cfg, seed, "train.mds"), "gen-data"), "train")
    test = load_dataset(_need(_path(cfg, seed, "test.mds"), "gen-data"), "test")
    return train, test


def _load_net(path, hint):
    return to_network(read_archive(_need(path, hint)))


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path, hint):
    with open(_need(path, hint), encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc.msg}", exc.pos) from None


# --- reports ---------------------------------------------------------------

def _mean_tree(entries):
    """Element-wise mean of numeric leaves shared by all ``entries``."""
    first = entries[0]
    if isinstance(first, dict):
        keys = [k for k in first if all(isinstance(e, dict) and k in e for e in entries)]
        out = {k: _mean_tree([e[k] for e in entries]) for k in keys}
        return {k: v for k, v in out.items() if v is not None}
    if isinstance(first, bool) or not isinstance(first, (int, float)):
        return None
    vals = np.array([float(e) for e in entries if isinstance(e, (int, float))])
    return float(vals.mean()) if vals.size == len(entries) else None


def make_report(cfg: ExperimentConfig, command, per_seed):
    entries = [per_seed[s] for s in sorted(per_seed)]
    return {
        "format_version": REPORT_FORMAT_VERSION,
        "tool_version": __version__,
        "command": command,
        "backend": backend(),
        "ssim": {"window": SSIM_WINDOW, "sigma": SSIM_SIGMA, "c1": SSIM_C1, "c2": SSIM_C2},
        "config": cfg.to_dict(),
        "seeds": {str(s): per_seed[s] for s in sorted(per_seed)},
        "aggregate": _mean_tree(entries) if entries else {},
    }


def strip_timings(obj):
    """Copy of a report without wall-clock fields, for determinism checks."""
    if isinstance(obj, dict):
        return {k: strip_timings(v) for k, v in obj.items() if k not in TIMING_KEYS and k != "backend"}
    if isinstance(obj, list):
        return [strip_timings(v) for v in obj]
    return obj


def _finish(cfg, command, per_seed):
    report = make_report(cfg, command, per_seed)
    os.makedirs(cfg.out, exist_ok=True)
    _write_json(os.path.join(cfg.out, f"{command.replace('-', '_')}_report.json"), report)
    return report


# --- attack artifacts ------------------------------------------------------

@dataclass
class AttackArtifacts:
    """Everything the attacker keeps to read data back out of a model."""

    kind: str
    targets: Dataset
    meta: dict
    reverse: Optional[ReverseParams] = None
    codec: Optional[DecCodec] = None

    @property
    def qcfg(self):
        return QuantizerConfig(self.meta["shift"], self.meta["scale"])

    def sent_codes(self):
        return np.asarray(self.meta["sent_codes"], dtype=np.uint16)

    def reconstruct(self, net):
        """``(images, LeakageResult, problem)`` for the model ``net``."""
        if self.kind == "transpose":
            keys = target_keys(self.targets.labels, self.meta["num_classes"], self.meta["key_seed"], self.meta["key_noise_scale"])
            images = transpose_reconstruct(net, self.reverse, keys, self.targets.shape)
            return images, leakage(self.targets.images, images), None
        images, payload, problem = dec_reconstruct(to_archive(net), self.codec, self.qcfg, count=len(self.targets))
        ber = bit_error_rate(self.sent_codes(), payload.codes)
        return images, leakage(self.targets.images, images, ber), problem


def _save_artifacts(cfg, seed, art: AttackArtifacts):
    save_dataset(art.targets, _path(cfg, seed, "targets.mds"))
    if art.reverse is not None:
        entries = [ArchiveEntry(f"reverse{k + 1}.bias", (b.size,), b.astype(np.float32)) for k, b in enumerate(art.reverse.biases)]
        write_archive(WeightArchive(entries), _path(cfg, seed, "reverse.mwt"))
    if art.codec is not None and art.codec.kind == "linear_autoencoder":
        c = art.codec
        entries = [
            ArchiveEntry("codec.mean", (c.mean.size,), c.mean.astype(np.float32)),
            ArchiveEntry("codec.basis", c.basis.shape, c.basis.astype(np.float32).reshape(-1)),
            ArchiveEntry("codec.z_lo", (c.z_lo.size,), c.z_lo.astype(np.float32)),
            ArchiveEntry("codec.z_hi", (c.z_hi.size,), c.z_hi.astype(np.float32)),
        ]
        write_archive(WeightArchive(entries), _path(cfg, seed, "codec.mwt"))
    _write_json(_path(cfg, seed, "attack.json"), art.meta)


def load_artifacts(cfg, seed) -> AttackArtifacts:
    meta = _read_json(_path(cfg, seed, "attack.json"), "attack")
    targets = load_dataset(_need(_path(cfg, seed, "targets.mds"), "attack"), "targets")
    if meta.get("kind") == "transpose":
        arch = read_archive(_need(_path(cfg, seed, "reverse.mwt"), "attack"))
        biases = [arch[f"reverse{k + 1}.bias"].astype(np.float64) for k in range(len(arch.entries))]
        return AttackArtifacts("transpose", targets, meta, reverse=ReverseParams(biases, list(meta["reverse_activations"])))
    if meta.get("kind") == "dec":
        shape = tuple(meta["image_shape"])
        if meta["codec"] == "linear_autoencoder":
            arch = read_archive(_need(_path(cfg, seed, "codec.mwt"), "attack"))
            codec = DecCodec(
                "linear_autoencoder",
                meta["latent_dim"],
                shape,
                meta["lo"],
                meta["hi"],
                arch["codec.mean"].astype(np.float64),
                arch["codec.basis"].astype(np.float64),
                arch["codec.z_lo"].astype(np.float64),
                arch["codec.z_hi"].astype(np.float64),
            )
        else:
            codec = DecCodec(meta["codec"], meta["latent_dim"], shape, meta["lo"], meta["hi"])
        return AttackArtifacts("dec", targets, meta, codec=codec)
    raise ParseError(f"attack.json has unknown kind {meta.get('kind')!r}")


# --- commands --------------------------------------------------------------

def cmd_gen_data(cfg: ExperimentConfig):
    """Write synthetic train/test splits per seed."""
    per_seed = {}
    d = cfg.data
    for seed in cfg.seeds:
        spec = SynthSpec(d.num_classes, d.n_train, d.n_test, d.size, d.noise_std, seed)
        train, test = synth_generate(spec)
        seed_dir(cfg, seed, create=True)
        per_seed[seed] = {
            "train_bytes": save_dataset(train, _path(cfg, seed, "train.mds")),
            "test_bytes": save_dataset(test, _path(cfg, seed, "test.mds")),
            "class_counts": np.bincount(train.labels, minlength=d.num_classes).tolist(),
        }
    return _finish(cfg, "gen-data", per_seed)


def cmd_train(cfg: ExperimentConfig):
    """Train the clean classifier (model.mwt)."""
    per_seed = {}
    m = cfg.model
    for seed in cfg.seeds:
        train, test = _load_data(cfg, seed)
        net = init_network(m.widths, seed=seed)
        t0 = time.perf_counter()
        losses = train_classifier(net, train, m.epochs, m.lr, m.batch_size, seed)
        elapsed = time.perf_counter() - t0
        write_archive(net, _path(cfg, seed, "model.mwt"))
        per_seed[seed] = {
            "untrained": m.epochs == 0,
            "loss_curve": losses,
            "utility": evaluate(net, test).to_dict(),
            "timings": {"train_s": elapsed},
        }
    return _finish(cfg, "train", per_seed)


def _attack_transpose(cfg, seed, train, test):
    a = cfg.attack
    tcfg = TransposeConfig(
        num_targets=a.num_targets,
        lr_cls=a.lr_cls,
        lr_mem=a.lr_mem,
        key_seed=seed,
        key_noise_scale=a.key_noise_scale,
        epochs=a.epochs,
        batch_size=cfg.model.batch_size,
        seed=seed,
    )
    net = init_network(cfg.model.widths, seed=seed)
    net, reverse = transpose_train(net, train, tcfg)
    n = min(a.num_targets, len(train))
    meta = {
        "kind": "transpose",
        "num_targets": n,
        "num_classes": train.num_classes,
        "key_seed": seed,
        "key_noise_scale": a.key_noise_scale,
        "reverse_activations": reverse.activations,
        "image_shape": list(train.shape),
    }
    return net, AttackArtifacts("transpose", train.subset(np.arange(n)), meta, reverse=reverse), None


def _attack_dec(cfg, seed, train, test):
    a = cfg.attack
    net = _load_net(_path(cfg, seed, "model.mwt"), "train")
    if a.n > len(train):
        raise ArgumentError(f"attack n={a.n} exceeds the {len(train)} training images")
    targets = train.subset(np.arange(a.n))
    qcfg = QuantizerConfig(a.shift, a.scale)
    if a.codec == "linear_autoencoder":
        codec = DecCodec.fit_linear(train.images[a.n :], a.latent_dim, qcfg.min_val, qcfg.max_val)
    else:
        codec = DecCodec(a.codec, a.latent_dim, train.shape, qcfg.min_val, qcfg.max_val)
    export = dec_attack_export(net, targets.images, codec, qcfg)
    meta = {
        "kind": "dec",
        "n": a.n,
        "latent_dim": a.latent_dim,
        "codec": a.codec,
        "lo": codec.lo,
        "hi": codec.hi,
        "shift": a.shift,
        "scale": a.scale,
        "image_shape": list(train.shape),
        "clamped": export.clamped,
        "sent_codes": export.payload.codes.tolist(),
    }
    return to_network(export.archive), AttackArtifacts("dec", targets, meta, codec=codec), export.archive


def cmd_attack(cfg: ExperimentConfig):
    """Train or pack the configured exfiltration attack (attacked.mwt)."""
    per_seed = {}
    for seed in cfg.seeds:
        train, test = _load_data(cfg, seed)
        t0 = time.perf_counter()
        run = _attack_transpose if cfg.attack.kind == "transpose" else _attack_dec
        net, art, archive = run(cfg, seed, train, test)
        elapsed = time.perf_counter() - t0
        write_archive(archive if archive is not None else net, _path(cfg, seed, "attacked.mwt"))
        _save_artifacts(cfg, seed, art)
        # score what extract will see: the exported binary32 model and the stored artifacts
        _, leak, problem = load_artifacts(cfg, seed).reconstruct(to_network(read_archive(_path(cfg, seed, "attacked.mwt"))))
        per_seed[seed] = {
            "attack": cfg.attack.kind,
            "utility": evaluate(net, test).to_dict(),
            "leakage": leak.to_dict(),
            "payload_problem": problem,
            "timings": {"attack_s": elapsed},
        }
    return _finish(cfg, "attack", per_seed)


def cmd_mitigate(cfg: ExperimentConfig):
    """Sanitize a model with the configured method (mitigated.mwt)."""
    per_seed = {}
    src = cfg.mitigation.source
    for seed in cfg.seeds:
        train, test = _load_data(cfg, seed)
        in_path = _need(_path(cfg, seed, f"{src}.mwt"), "attack" if src == "attacked" else "train")
        net = to_network(read_archive(in_path))
        method = cfg.mitigation_method(seed)
        out, rep = mitigate(net, method, train)
        write_archive(out, _path(cfg, seed, "mitigated.mwt"))
        rep_d = rep.to_dict()
        wall = rep_d.pop("wall_time_s")
        per_seed[seed] = {
            "mitigation": rep_d,
            "utility_before": evaluate(net, test).to_dict(),
            "utility": evaluate(out, test).to_dict(),
            "timings": {"mitigation_s": wall},
        }
    return _finish(cfg, "mitigate", per_seed)


def _source_model(cfg, seed):
    src = cfg.eval.source
    hint = {"model": "train", "attacked": "attack", "mitigated": "mitigate"}[src]
    return _load_net(_path(cfg, seed, f"{src}.mwt"), hint)


def cmd_extract(cfg: ExperimentConfig):
    """Run the attacker's recovery on a model and score the leakage."""
    per_seed = {}
    for seed in cfg.seeds:
        art = load_artifacts(cfg, seed)
        net = _source_model(cfg, seed)
        images, leak, problem = art.reconstruct(net)
        save_dataset(Dataset(images, art.targets.labels, art.targets.num_classes, "recon"), _path(cfg, seed, "recon.mds"))
        per_seed[seed] = {"source": cfg.eval.source, "leakage": leak.to_dict(), "payload_problem": problem}
    return _finish(cfg, "extract", per_seed)


def cmd_eval(cfg: ExperimentConfig):
    """Score a model's test accuracy and macro AUC."""
    per_seed = {}
    for seed in cfg.seeds:
        _, test = _load_data(cfg, seed)
        net = _source_model(cfg, seed)
        per_seed[seed] = {"source": cfg.eval.source, "utility": evaluate(net, test).to_dict()}
    return _finish(cfg, "eval", per_seed)


def usability_auc(stolen: Dataset, test: Dataset, cfg: ExperimentConfig, seed):
    """Macro AUC on the real test set of a fresh classifier trained on ``stolen``."""
    if len(np.unique(stolen.labels)) < 2:
        raise UndefinedAUCError("stolen dataset holds a single class; usability AUC is undefined")
    if stolen.shape != test.shape:
        raise ArgumentError(f"stolen images {stolen.shape} do not match test images {test.shape}")
    e = cfg.eval
    clf = fresh_classifier(stolen, hidden=cfg.model.widths[1:-1], seed=seed)
    train_classifier(clf, stolen, e.usability_epochs, e.usability_lr, e.usability_batch_size, seed)
    return evaluate(clf, test)


def cmd_usability(cfg: ExperimentConfig):
    """Train a fresh classifier on recovered images and score it on real data."""
    per_seed = {}
    for seed in cfg.seeds:
        _, test = _load_data(cfg, seed)
        stolen = load_dataset(_need(_path(cfg, seed, "recon.mds"), "extract"), "recon")
        res = usability_auc(stolen, test, cfg, seed)
        per_seed[seed] = {"usability": {"auc": res.macro_auc, "accuracy": res.accuracy}, "num_stolen": len(stolen)}
    return _finish(cfg, "usability", per_seed)


ABLATE_FIELDS = ["eta_high", "decay", "seed", "epoch", "accuracy", "macro_auc", "ssim", "psnr", "ber"]


def epochs_to_settle(accs, tol=0.01):
    """First epoch (>= 1) from which accuracy stays within ``tol`` of its final value."""
    final = accs[-1]
    for e in range(1, len(accs)):
        if all(abs(a - final) <= tol for a in accs[e:]):
            return e
    return len(accs) - 1


def cmd_ablate(cfg: ExperimentConfig):
    """Sweep LWLRD peak rate and decay kind, recording per-epoch curves."""
    ab = cfg.ablate
    if not ab.eta_high or not ab.decay or ab.epochs < 1:
        raise ArgumentError("ablation sweep is empty: need eta_high values, decay kinds and epochs >= 1")
    settings = [(eh, d) for eh in ab.eta_high for d in ab.decay]
    for eh, d in settings:
        cfg.schedule("lwlrd_ft", eh, d)  # rejects eta_high <= 0 before any work
    rows, per_seed = [], {}
    for seed in cfg.seeds:
        train, test = _load_data(cfg, seed)
        art = load_artifacts(cfg, seed)
        net = _load_net(_path(cfg, seed, "attacked.mwt"), "attack")
        entry = {}
        for eh, d in settings:
            curve = []

            def record(epoch, model):
                util = evaluate(model, test)
                _, leak, _ = art.reconstruct(model)
                curve.append({"epoch": epoch, "accuracy": util.accuracy, "macro_auc": util.macro_auc,
                              "ssim": leak.ssim_mean, "psnr": leak.psnr_mean, "ber": leak.ber})

            record(0, net)
            method = cfg.mitigation_method(seed, "lwlrd_ft", eh, d)
            method.epochs = ab.epochs
            mitigate(net, method, train, callback=record)
            for point in curve:
                rows.append({"eta_high": eh, "decay": d, "seed": seed, **point})
            accs = [p["accuracy"] for p in curve]
            entry[f"{eh:g}/{d}"] = {
                "epochs_to_settle": epochs_to_settle(accs),
                "final_accuracy": accs[-1],
                "ssim_epoch1": curve[1]["ssim"],
                "ssim_final": curve[-1]["ssim"],
            }
        per_seed[seed] = entry
    rows.sort(key=lambda r: (r["eta_high"], r["decay"], r["seed"], r["epoch"]))
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "ablate.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATE_FIELDS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    report = _finish(cfg, "ablate", per_seed)
    report["rows"] = rows
    return report


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "attack": cmd_attack,
    "mitigate": cmd_mitigate,
    "extract": cmd_extract,
    "eval": cmd_eval,
    "usability": cmd_usability,
    "ablate": cmd_ablate,
}
