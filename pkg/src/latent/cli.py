"""Command-line entry point: ``latent <verb> ...``.

Exit codes: 0 success, 2 configuration/usage error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .encoding import EncodingSpec, NormStats, encode_matrix, fit_zscore
from .features import build_conv_module, cifar_config, extract_batch, mnist_config, toy_config
from .ldp import PrivacyParams, ProtocolKind, RngStream, protocol_probs, randomize_batch
from .datasets import read_image_csv, read_table_csv
from .pipeline import PipelineError, audit_report, bench, run_pipeline, sweep_alpha, sweep_epsilon

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("latent")


def _floats(text: str) -> List[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> List[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="INI experiment config")
    p.add_argument("--output-dir")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--protocol", choices=[k.value.lower() for k in ProtocolKind])
    p.add_argument("--whole-bits", type=int)
    p.add_argument("--frac-bits", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, help="randomization seed")
    p.add_argument("--no-randomize", action="store_true", help="skip randomization (p = 1 reference run)")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    try:
        changes = {}
        if args.epsilon is not None:
            changes["epsilon"] = args.epsilon
        if args.alpha is not None:
            changes["alpha"] = args.alpha
        if args.protocol:
            changes["protocol"] = ProtocolKind(args.protocol)
        if args.whole_bits is not None or args.frac_bits is not None:
            changes["encoding"] = EncodingSpec(
                cfg.encoding.whole_bits if args.whole_bits is None else args.whole_bits,
                cfg.encoding.frac_bits if args.frac_bits is None else args.frac_bits,
            )
        if args.epochs is not None:
            changes["dense"] = replace(cfg.dense, epochs=args.epochs)
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.no_randomize:
            changes["randomize"] = False
        if args.output_dir:
            changes["output_dir"] = Path(args.output_dir)
        return replace(cfg, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _out_dir(cfg: ExperimentConfig) -> Path:
    if cfg.output_dir is None:
        raise ConfigError("no output directory: set [run] output_dir or pass --output-dir")
    return cfg.output_dir


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    result = run_pipeline(cfg, out)
    print(json.dumps(result.metrics, indent=2))
    log.info("artifacts written to %s", out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    if bool(args.epsilons) == bool(args.alphas):
        raise ConfigError("give exactly one of --epsilons or --alphas")
    if args.epsilons:
        if len(args.epsilons) < 2:
            raise ConfigError("an epsilon sweep needs at least two values")
        report = sweep_epsilon(cfg, args.epsilons, args.seeds, out)
        print(json.dumps({k: v for k, v in report.items() if k != "rows"}, indent=2, default=str))
    else:
        if len(args.alphas) < 2:
            raise ConfigError("an alpha sweep needs at least two values")
        report = sweep_alpha(cfg, args.alphas, out)
        print(json.dumps(report["rows"], indent=2))
    return EXIT_OK


_PRESETS = {
    "mnist": lambda seed: mnist_config(seed),
    "cifar": lambda seed: cifar_config(seed),
    "cifar56": lambda seed: cifar_config(seed, 56),
    "toy": lambda seed: toy_config(seed),
}


def cmd_bench(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        conv, spec = cfg.conv, cfg.encoding
        protocol, eps, alpha = cfg.protocol, cfg.epsilon, cfg.alpha
    else:
        conv = _PRESETS[args.preset](args.seed)
        spec = EncodingSpec(args.whole_bits, args.frac_bits)
        protocol, eps, alpha = ProtocolKind(args.protocol), args.epsilon, args.alpha
    report = bench(conv, spec, protocol, eps, alpha, args.records, args.seed, args.scaling)
    text = json.dumps(report, indent=2)
    print(text)
    if args.output:
        Path(args.output).write_text(text + "\n")
        if report["scaling"]:
            table = Path(args.output).with_suffix(".csv")
            with open(table, "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=["r", "bits", "encode_s", "randomize_s", "encode_ratio", "randomize_ratio"])
                writer.writeheader()
                writer.writerows(report["scaling"])
    return EXIT_OK


def cmd_audit(args) -> int:
    report = audit_report(args.protocol, args.epsilon, args.alpha, args.length, exact=args.exact)
    text = json.dumps(report, indent=2)
    print(text)
    if args.output:
        Path(args.output).write_text(text + "\n")
    return EXIT_OK if report["pass"] else EXIT_RUNTIME


def _server_config(cfg: ExperimentConfig, clients: int, host: str, port: int):
    from .netsim import ServerConfig

    module = build_conv_module(cfg.conv)
    x_train, y_train = read_image_csv(cfg.data.train, cfg.data.image_shape, cfg.data.label_column)
    stats = fit_zscore(extract_batch(module, x_train))
    n_classes = cfg.n_classes or max(int(y_train.max()) + 1, 2)
    return ServerConfig(
        stats, cfg.encoding, cfg.epsilon, cfg.alpha, replace(cfg.dense, n_classes=n_classes), clients,
        cfg.protocol, cfg.randomize, host, port, cfg.output_dir,
    )


def cmd_serve(args) -> int:
    from .netsim import run_server

    cfg = _config(args)
    _out_dir(cfg)
    server_cfg = _server_config(cfg, args.clients, args.host, args.port)

    def ready(port):
        print(f"listening on {args.host}:{port}", flush=True)

    result = run_server(server_cfg, ready)
    summary = {
        "records": len(result.records),
        "per_client": {str(k): v for k, v in result.per_client.items()},
        "rejected": result.rejected,
        "checkpoint": str(result.checkpoint) if result.checkpoint else None,
        "audit_log": str(result.audit_log) if result.audit_log else None,
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_client(args) -> int:
    from .netsim import run_client

    cfg = load_config(args.config)
    path = cfg.data.train if args.split == "train" else cfg.data.test
    images, labels = read_image_csv(path, cfg.data.image_shape, cfg.data.label_column)
    lo, _, hi = args.slice.partition(":")
    sl = slice(int(lo) if lo else None, int(hi) if hi else None)
    module = build_conv_module(cfg.conv)
    summary = run_client(images[sl], labels[sl], module, args.host, args.port, args.client_id, seed=args.seed)
    print(json.dumps(summary.__dict__))
    return EXIT_OK


def _write_bit_table(path: Optional[str], labels, bits) -> None:
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        writer = csv.writer(fh)
        writer.writerow(["label", "bits"])
        for label, row in zip(labels, bits):
            writer.writerow([int(label), "".join("1" if b else "0" for b in row)])
    finally:
        if path:
            fh.close()


def _read_bit_table(path: str):
    labels, rows = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "bits" not in reader.fieldnames:
            raise ConfigError(f"{path}: expected a 'bits' column")
        for rec in reader:
            text = rec["bits"].strip()
            if not text or set(text) - {"0", "1"}:
                raise ConfigError(f"{path}: bit strings must be non-empty and contain only 0/1")
            rows.append(np.frombuffer(text.encode(), dtype=np.uint8) - ord("0"))
            labels.append(int(rec.get("label") or 0))
    if not rows:
        raise ConfigError(f"{path}: no rows")
    if len({r.size for r in rows}) != 1:
        raise ConfigError(f"{path}: bit strings differ in length")
    return np.array(labels), np.stack(rows)


def cmd_encode(args) -> int:
    values, labels = read_table_csv(args.input, args.label_column)
    spec = EncodingSpec(args.whole_bits, args.frac_bits)
    if args.stats:
        stats = NormStats.load(args.stats)
    else:
        stats = fit_zscore(values)
        if args.write_stats:
            stats.save(args.write_stats)
    bits = encode_matrix(stats.transform(values), spec)
    _write_bit_table(args.output, labels, bits)
    return EXIT_OK


def cmd_randomize(args) -> int:
    labels, bits = _read_bit_table(args.input)
    sensitivity = args.sensitivity or bits.shape[1]
    probs = protocol_probs(args.protocol, PrivacyParams(args.epsilon, args.alpha, sensitivity))
    out = randomize_batch(bits, probs, RngStream(args.seed))
    _write_bit_table(args.output, labels, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latent", description="Locally private learning on randomized bit strings.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("pipeline", help="run extraction, encoding, randomization and training")
    _add_overrides(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("sweep", help="accuracy against epsilon or alpha")
    _add_overrides(p)
    p.add_argument("--epsilons", type=_floats)
    p.add_argument("--alphas", type=_floats)
    p.add_argument("--seeds", type=_ints, help="seeds for an epsilon sweep (default: config seed)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="per-record perturbation latency")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config")
    src.add_argument("--preset", choices=sorted(_PRESETS), default="mnist")
    p.add_argument("--records", type=int, default=100)
    p.add_argument("--whole-bits", type=int, default=4)
    p.add_argument("--frac-bits", type=int, default=5)
    p.add_argument("--protocol", default="uer", choices=[k.value.lower() for k in ProtocolKind])
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=7.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scaling", type=_ints, help="feature counts r for the scaling table")
    p.add_argument("--output", help="write the JSON report here (and the scaling table as .csv)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("audit", help="brute-force and analytic likelihood-ratio audit")
    p.add_argument("--protocol", required=True, choices=[k.value.lower() for k in ProtocolKind])
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--exact", action="store_true", help="also enumerate in 256-bit precision (length <= 6)")
    p.add_argument("--output")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("serve", help="run the curator and train on received records")
    _add_overrides(p)
    p.add_argument("--clients", type=int, required=True, help="sessions to wait for")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("client", help="stream a slice of a dataset to a curator")
    p.add_argument("--config", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--client-id", type=int, required=True)
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.add_argument("--slice", default=":", help="start:end row range")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_client)

    p = sub.add_parser("encode", help="z-score and encode a numeric feature table")
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--label-column", default="label")
    p.add_argument("--whole-bits", type=int, default=4)
    p.add_argument("--frac-bits", type=int, default=5)
    p.add_argument("--stats", help="existing normalization stats JSON")
    p.add_argument("--write-stats", help="save the fitted stats here")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("randomize", help="randomize a table of bit strings")
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--protocol", default="uer", choices=[k.value.lower() for k in ProtocolKind])
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--sensitivity", type=int, help="defaults to the string length")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_randomize)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PipelineError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
