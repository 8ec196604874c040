"""Command-line surface.

Subcommands: keygen, embed, detect, train-gnr, train-fuser, simulate,
identify. Training and benchmark options can come from a JSON config file
(--config); explicit flags win over the file. Exit codes: 0 success,
1 usage, 2 I/O or parse failure, 3 numeric or training failure. The
GMARK_THREADS environment variable sizes the benchmark thread pool.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .codec import detect_latent, embed_latent, prepare
from .errors import FormatError, TrainingError
from .fusion import FuserTrainConfig, load_fuser, save_fuser, train_fuser, training_accuracy
from .keys import generate_key, load_key, save_key
from .latent_io import read_latent, write_latent
from .latents import sample_gaussian
from .restorer import (
    GnrTrainConfig,
    load_restorer,
    restore,
    save_restorer,
    train_restorer,
    watermarked_signal_maps,
)
from .simulate import (
    BenchmarkConfig,
    InversionNoiseModel,
    run_benchmark,
    write_report,
)
from .spatial import votes_from_signal_maps
from .stats import bit_accuracy, choose_threshold, identify, load_registry
from .transforms import TransformSpec, apply_transform


class UsageError(Exception):
    pass


_UNSET = object()  # distinguishes "flag absent" from an explicit 'none'


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_shape(text: str):
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3:
        raise UsageError(f"shape must be c,w,h (got {text!r})")
    return tuple(parts)


def _parse_range(text: str):
    if text.lower() in ("none", "off"):
        return None
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 2:
        raise UsageError(f"range must be lo,hi or 'none' (got {text!r})")
    return (parts[0], parts[1])


def _load_config_file(path):
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"config file is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise FormatError("config file must hold a JSON object")
    return doc


def build_parser() -> _Parser:
    p = _Parser(prog="gmark", description="Dual-domain watermark codec for Gaussian latents")
    p.add_argument("--version", action="version", version=f"gmark {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    kg = sub.add_parser("keygen", help="write a fresh key file")
    kg.add_argument("--out", required=True)
    kg.add_argument("--bits", type=int, default=256)
    kg.add_argument("--shape", type=_parse_shape, default=(4, 64, 64))
    kg.add_argument("--ring-radius", type=int, default=4)
    kg.add_argument("--seed", type=int, default=None)

    em = sub.add_parser("embed", help="embed the watermark into a latent")
    em.add_argument("--key", required=True)
    em.add_argument("--out", required=True)
    em.add_argument("--in", dest="in_path", default=None, help="input latent (GMLT); fresh noise when omitted")
    em.add_argument("--seed", type=int, default=0, help="seed for the fresh latent when --in is omitted")

    de = sub.add_parser("detect", help="detect the watermark in a latent")
    de.add_argument("--key", required=True)
    de.add_argument("--latent", required=True)
    de.add_argument("--gnr", default=None, help="restorer model file (GMNR)")
    de.add_argument("--fuser", default=None, help="fuser model file (GMFU)")
    de.add_argument("--fpr", type=float, default=0.01)
    de.add_argument("--json", dest="json_out", default=None, help="also write a JSON result file")

    tg = sub.add_parser("train-gnr", help="train the signal-map restorer")
    tg.add_argument("--key", required=True)
    tg.add_argument("--out", required=True)
    tg.add_argument("--config", default=None, help="JSON file with GnrTrainConfig fields")
    tg.add_argument("--steps", type=int, default=None)
    tg.add_argument("--batch", type=int, default=None)
    tg.add_argument("--lr", type=float, default=None)
    tg.add_argument("--optimizer", choices=("adam", "sgd"), default=None)
    tg.add_argument("--base", type=int, default=None, help="base feature width")
    tg.add_argument("--rotation", type=_parse_range, default=_UNSET, help="lo,hi degrees or 'none'")
    tg.add_argument("--crop", type=_parse_range, default=_UNSET, help="lo,hi area ratio or 'none'")
    tg.add_argument("--flip-p", type=float, default=None)
    tg.add_argument("--seed", type=int, default=None)
    tg.add_argument("--quiet", action="store_true")

    tf = sub.add_parser("train-fuser", help="train the score fuser from simulated scores")
    tf.add_argument("--key", required=True)
    tf.add_argument("--out", required=True)
    tf.add_argument("--gnr", default=None, help="restorer used for the spatial score")
    tf.add_argument("--config", default=None, help="JSON file with FuserTrainConfig fields")
    tf.add_argument("--n", type=int, default=100, help="training samples per class")
    tf.add_argument("--steps", type=int, default=None)
    tf.add_argument("--lr", type=float, default=None)
    tf.add_argument("--seed", type=int, default=None)

    si = sub.add_parser("simulate", help="run the latent-level benchmark")
    si.add_argument("--key", required=True)
    si.add_argument("--out-dir", required=True)
    si.add_argument("--gnr", default=None)
    si.add_argument("--config", default=None, help="JSON file with BenchmarkConfig fields")
    si.add_argument("--n", type=int, default=None)
    si.add_argument("--n-train", type=int, default=None)
    si.add_argument("--variants", default=None, help="comma list from spatial,freq,dual,dual_gnr")
    si.add_argument("--fpr", type=float, default=None)
    si.add_argument("--seed", type=int, default=None)

    idf = sub.add_parser("identify", help="attribute a latent to a registered user")
    idf.add_argument("--key", required=True)
    idf.add_argument("--registry", required=True)
    idf.add_argument("--latent", required=True)
    idf.add_argument("--gnr", default=None)
    idf.add_argument("--fpr", type=float, default=0.01)
    return p


def cmd_keygen(args) -> int:
    key = generate_key(l=args.bits, latent_shape=args.shape, ring_radius=args.ring_radius, seed=args.seed)
    save_key(key, args.out)
    print(f"wrote key file {args.out} (l={key.l}, shape={key.latent_shape}, ring_radius={key.ring_radius})")
    return 0


def cmd_embed(args) -> int:
    key = load_key(args.key)
    km = prepare(key)
    if args.in_path is not None:
        z = read_latent(args.in_path)
        if tuple(z.shape) != key.latent_shape:
            raise ValueError(f"latent shape {z.shape} does not match key {key.latent_shape}")
    else:
        z = sample_gaussian(key.latent_shape, args.seed)
    write_latent(embed_latent(z, km), args.out)
    print(f"wrote watermarked latent {args.out}")
    return 0


def cmd_detect(args) -> int:
    key = load_key(args.key)
    km = prepare(key)
    z = read_latent(args.latent)
    restorer = load_restorer(args.gnr) if args.gnr else None
    fuser = load_fuser(args.fuser) if args.fuser else None
    result = detect_latent(z, km, restorer=restorer, fuser=fuser, target_fpr=args.fpr)
    print(result.summary())
    if args.json_out:
        doc = {
            "spatial_score": result.spatial_score,
            "freq_score": result.freq_score,
            "fused_score": result.fused_score,
            "bit_accuracy": result.bit_accuracy,
            "matched_bits": result.matched_bits,
            "threshold_bits": result.policy.tau,
            "target_fpr": result.policy.target_fpr,
            "watermarked": result.watermarked,
            "votes": [float(v) for v in result.votes],
        }
        Path(args.json_out).write_text(json.dumps(doc, indent=2) + "\n")
    return 0


def _gnr_config(args) -> GnrTrainConfig:
    doc = _load_config_file(args.config)
    if "rotation" in doc and doc["rotation"] is not None:
        doc["rotation"] = tuple(doc["rotation"])
    if "crop" in doc and doc["crop"] is not None:
        doc["crop"] = tuple(doc["crop"])
    overrides = {
        "steps": args.steps,
        "batch_size": args.batch,
        "learning_rate": args.lr,
        "optimizer": args.optimizer,
        "base_features": args.base,
        "flip_p": args.flip_p,
        "seed": args.seed,
    }
    for k, v in overrides.items():
        if v is not None:
            doc[k] = v
    if args.rotation is not _UNSET:
        doc["rotation"] = args.rotation
    if args.crop is not _UNSET:
        doc["crop"] = args.crop
    try:
        return GnrTrainConfig(**doc)
    except TypeError as e:
        raise FormatError(f"bad training config: {e}") from e


def cmd_train_gnr(args) -> int:
    key = load_key(args.key)
    km = prepare(key)
    config = _gnr_config(args)

    def progress(step, loss):
        if not args.quiet and (step + 1) % 100 == 0:
            print(f"  step {step + 1}/{config.steps} loss {loss:.4f}", flush=True)

    model, losses = train_restorer(config, km.signal_map, km.pattern, progress=progress)
    save_restorer(model, args.out)

    # small held-out check: clean and rotated recovery
    rng = np.random.default_rng(10_000 + config.seed)
    maps = watermarked_signal_maps(8, km.signal_map, km.pattern, rng)
    rot = np.stack(
        [apply_transform(m, TransformSpec.rotate(75, rng_seed=int(rng.integers(2**63)))) for m in maps]
    )
    acc_clean = np.mean(
        [bit_accuracy(v, key.bits) for v in votes_from_signal_maps(restore(model, maps), key.cipher, km.layout)]
    )
    acc_rot = np.mean(
        [bit_accuracy(v, key.bits) for v in votes_from_signal_maps(restore(model, rot), key.cipher, km.layout)]
    )
    print(
        f"wrote restorer {args.out} ({model.parameter_count()} params); "
        f"final loss {losses[-1]:.4f}, held-out bit accuracy clean {acc_clean:.3f} rotate75 {acc_rot:.3f}"
    )
    return 0


def _fuser_config(args) -> FuserTrainConfig:
    doc = _load_config_file(args.config)
    for k, v in (("steps", args.steps), ("learning_rate", args.lr), ("seed", args.seed)):
        if v is not None:
            doc[k] = v
    try:
        return FuserTrainConfig(**doc)
    except TypeError as e:
        raise FormatError(f"bad fuser config: {e}") from e


def cmd_train_fuser(args) -> int:
    key = load_key(args.key)
    km = prepare(key)
    restorer = load_restorer(args.gnr) if args.gnr else None
    config = _fuser_config(args)
    from .simulate import sample_scores  # training data comes from the harness

    bench = BenchmarkConfig(n_samples=args.n, n_train=args.n, seed=config.seed)
    mixed = tuple(spec for _, spec in bench.distortions)
    raw_pos, raw_neg, gnr_pos, gnr_neg = sample_scores(
        km, restorer, bench, None, np.random.SeedSequence(config.seed), args.n, mixed_specs=mixed
    )
    pos = gnr_pos if restorer is not None else raw_pos
    neg = gnr_neg if restorer is not None else raw_neg
    pos_pairs = np.stack([pos[0], pos[1]], axis=1)
    neg_pairs = np.stack([neg[0], neg[1]], axis=1)
    model = train_fuser(config, pos_pairs, neg_pairs)
    save_fuser(model, args.out)
    acc = training_accuracy(model, pos_pairs, neg_pairs)
    print(f"wrote fuser {args.out}; training accuracy {acc:.3f} on {args.n}/{args.n} score pairs")
    return 0


def cmd_simulate(args) -> int:
    key = load_key(args.key)
    km = prepare(key)
    restorer = load_restorer(args.gnr) if args.gnr else None
    doc = _load_config_file(args.config)
    if "noise" in doc:
        doc["noise"] = InversionNoiseModel(**doc["noise"])
    if "variants" in doc:
        doc["variants"] = tuple(doc["variants"])
    if "distortions" in doc:
        raise FormatError("custom distortion lists are configured programmatically, not via JSON")
    overrides = {
        "n_samples": args.n,
        "n_train": args.n_train,
        "target_fpr": args.fpr,
        "seed": args.seed,
    }
    for k, v in overrides.items():
        if v is not None:
            doc[k] = v
    if args.variants is not None:
        doc["variants"] = tuple(args.variants.split(","))
    try:
        config = BenchmarkConfig(**doc)
    except TypeError as e:
        raise FormatError(f"bad benchmark config: {e}") from e
    report = run_benchmark(config, km, restorer=restorer)
    csv_path, summary_path = write_report(report, args.out_dir)
    print(report.summary())
    print(f"wrote {csv_path} and {summary_path}")
    return 0


def cmd_identify(args) -> int:
    key = load_key(args.key)
    km = prepare(key)
    registry = load_registry(key.bits, args.registry)
    z = read_latent(args.latent)
    restorer = load_restorer(args.gnr) if args.gnr else None
    result = detect_latent(z, km, restorer=restorer)
    policy = choose_threshold(key.l, args.fpr, n_users=registry.n_users)
    user, best_matches, matches = identify(result.votes, registry, policy)
    order = np.argsort(matches)[::-1][:5]
    print(f"threshold: {policy.tau}/{key.l} matched bits at {args.fpr:.2%} FPR over {registry.n_users} users")
    for rank, idx in enumerate(order, 1):
        print(f"  #{rank}: user {registry.user_ids[idx]} matches {int(matches[idx])}")
    if user is None:
        print("result: no watermark")
    else:
        print(f"result: user {user} ({best_matches} matched bits)")
    return 0


_COMMANDS = {
    "keygen": cmd_keygen,
    "embed": cmd_embed,
    "detect": cmd_detect,
    "train-gnr": cmd_train_gnr,
    "train-fuser": cmd_train_fuser,
    "simulate": cmd_simulate,
    "identify": cmd_identify,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 2
    except TrainingError as e:
        print(f"training error: {e}", file=sys.stderr)
        return 3
    except FloatingPointError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
