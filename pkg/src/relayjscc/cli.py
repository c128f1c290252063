"""Command-line entry point: ``relayjscc {train,eval,simulate,plot}``.

Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 external codec unavailable.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import torch
import yaml
from filelock import FileLock, Timeout

from . import channel as ch
from .codecs import get_codec
from .config import DataConfig, dump_config, load_config, RunConfig, set_path
from .data import natural_patches, subset
from .errors import CodecUnavailableError, ConfigurationError, DatasetError, RelayJSCCError
from .evaluation import SeparationBudget, emit_plots, read_records, separation_baseline, sweep, write_records
from .protocols import RelaySystem
from .training import restore, train

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CODEC = 0, 1, 2, 3

log = logging.getLogger("relayjscc")


def _float(text: str) -> float:
    return math.inf if text.lower() in ("inf", "+inf") else float(text)


def _float_list(text: str):
    return [_float(t) for t in text.split(",") if t.strip()]


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def resolve_config(args) -> RunConfig:
    with open(args.config) as f:
        raw = yaml.safe_load(f) or {}
    overrides = {
        "protocol.kind": args.protocol,
        "protocol.lambda": args.lam,
        "train.snr_sr_db": args.snr_sr,
        "train.max_epochs": args.epochs,
        "train.batch_size": args.batch_size,
        "data.root": args.data_root,
        "output_dir": args.output_dir,
        "seed": args.seed,
    }
    for dotted, value in overrides.items():
        if value is not None:
            set_path(raw, dotted, value)
    if args.protocol is not None and args.protocol.upper() != "DF" and args.lam is None:
        raw.get("protocol", {}).pop("lambda", None)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        set_path(raw, key, yaml.safe_load(value))
    return RunConfig.from_dict(raw)


def _load_splits(data: DataConfig, seed: int):
    try:
        return data.load(seed)
    except DatasetError as exc:
        raise ConfigurationError(f"data.root: {exc}") from None


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    splits = _load_splits(cfg.data, cfg.seed)
    if args.run_dir:
        run_dir = Path(args.run_dir)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run_dir = Path(cfg.output_dir) / f"{stamp}-{cfg.protocol.kind.value.lower()}"
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(run_dir / ".lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise RelayJSCCError(f"{run_dir} is locked by another process")
    try:
        resolved = run_dir / "resolved.yaml"
        resume_from = None
        if resolved.exists():
            if not args.resume:
                raise ConfigurationError(f"{run_dir} already holds a run; pass --resume to continue it")
            previous = load_config(resolved)
            if previous != cfg:
                raise ConfigurationError(f"--resume: config differs from the snapshot in {resolved}")
            resume_from = run_dir / "last.pt"
            if not resume_from.exists():
                raise ConfigurationError(f"--resume: no last.pt in {run_dir}")
        resolved.write_text(dump_config(cfg))
        torch.manual_seed(cfg.seed)
        system = RelaySystem(cfg.protocol, cfg.model, cfg.af_power)
        result = train(system, splits.train, splits.val, cfg.train, run_dir=run_dir, resume_from=resume_from)
        print(json.dumps({"run_dir": str(run_dir), "best_epoch": result.best_epoch,
                          "best_val_loss": result.best_val_loss, "epochs": len(result.history)}))
    finally:
        lock.release()
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval / plot
# ---------------------------------------------------------------------------


def _eval_images(args, run_cfg):
    if args.dataset == "natural":
        return natural_patches(args.subset or 512, seed=args.seed + 2_000_003)
    data = run_cfg.data if run_cfg is not None else DataConfig(root=args.data_root)
    if args.data_root:
        data.root = args.data_root
    if data.source == "natural":
        return natural_patches(args.subset or data.n_test, seed=args.seed + 2_000_003)
    splits = _load_splits(data, args.seed)
    return subset(splits.test, args.subset, args.seed)


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise ConfigurationError(f"checkpoint not found: {ckpt}")
    system, meta = restore(ckpt)
    resolved = ckpt.parent / "resolved.yaml"
    run_cfg = load_config(resolved) if resolved.exists() else None
    images = _eval_images(args, run_cfg)
    trained_range = None
    snr_sr = args.snr_sr
    if run_cfg is not None:
        t = run_cfg.train
        trained_range = (t.gamma_db, t.gamma_db) if t.gamma_mode == "fixed" else t.gamma_range
        if snr_sr is None:
            snr_sr = t.snr_sr_db
    if snr_sr is None:
        raise ConfigurationError("--snr-sr is required when the checkpoint has no resolved.yaml beside it")
    records = sweep(system, snr_sr, args.gamma_list, images, seed=args.seed, trained_gamma_range=trained_range,
                    model_id=args.model_id or ckpt.parent.name)
    if args.separation:
        codec = get_codec(args.separation)
        for gamma in args.gamma_list:
            records.append(separation_baseline(images, SeparationBudget(gamma, system.cfg.k), codec, snr_sr, args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records(records, out / "records.jsonl")
    emit_plots(records, out)
    for r in records:
        print(f"{r.protocol:10s} gamma={r.gamma_db:5.1f} dB  PSNR={r.psnr_db:7.3f} dB  SSIM={r.ssim:.4f}"
              + ("  (outside trained range)" if r.out_of_range else ""))
    return EXIT_OK


def cmd_plot(args) -> int:
    records = []
    for path in args.records:
        records.extend(read_records(path))
    for path in emit_plots(records, args.out, stem=args.stem):
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _empirical_snr(estimate, truth):
    err = estimate - truth
    return float(ch.average_power(truth).mean() / ch.average_power(err).mean())


def cmd_simulate(args) -> int:
    n = int(args.trials)
    g = torch.Generator().manual_seed(args.seed)
    links = ch.RelayLinks.from_snr_db(args.snr_sr, args.snr_sd, args.snr_rd)
    x = ch.normalize_power(ch.complex_noise((1, n), 1.0, g, dtype=torch.float64))
    ok = True
    print(f"links: SNR_sr={args.snr_sr} dB SNR_sd={args.snr_sd} dB SNR_rd={args.snr_rd} dB, {n} symbols")
    if args.snr_sr == math.inf:
        print("S-R link: noiseless")
    if args.verify in ("mrc", "all"):
        y_sd = ch.awgn_link(x, links.sd, g)
        y_sr = ch.awgn_link(x, links.sr, g)
        y_rd = ch.awgn_link(ch.af_scale(y_sr, links.sr), links.rd, g)
        measured = _empirical_snr(ch.mrc_combine(y_sd, y_rd, links), x)
        single = _empirical_snr(y_sd / links.sd.alpha, x)
        analytic = ch.mrc_output_snr(links)
        rel = abs(measured - analytic) / analytic
        ok &= rel <= 0.02
        print(f"mrc: combined SNR measured={ch.snr_linear_to_db(measured):.4f} dB "
              f"analytic={ch.snr_linear_to_db(analytic):.4f} dB rel.err={rel:.2%}; "
              f"gain over direct link={ch.snr_linear_to_db(measured / single):.3f} dB")
    if args.verify in ("af-noise", "all"):
        y_sr = ch.awgn_link(x, links.sr, g)
        beta = ch.af_beta(links.sr)
        y_rd = ch.awgn_link(beta * y_sr, links.rd, g)
        resid = y_rd - beta * links.rd.alpha * links.sr.alpha * x
        measured = float(ch.average_power(resid).mean())
        analytic = ch.effective_af_noise_var(links)
        rel = abs(measured - analytic) / analytic
        ok &= rel <= 0.01
        print(f"af-noise: variance measured={measured:.6f} analytic={analytic:.6f} rel.err={rel:.2%}")
    if args.verify in ("power", "all"):
        y_sr = ch.awgn_link(x, links.sr, g)
        p = float(ch.average_power(ch.af_scale(y_sr, links.sr)).mean())
        ok &= abs(p - 1) <= 0.01
        print(f"power: AF relay output power={p:.5f} (target 1)")
    return EXIT_OK if ok else EXIT_RUNTIME


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relayjscc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one protocol from a YAML run config")
    t.add_argument("config")
    t.add_argument("--protocol")
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--snr-sr", type=_float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--data-root")
    t.add_argument("--output-dir")
    t.add_argument("--run-dir", help="use this directory instead of a timestamped one")
    t.add_argument("--resume", action="store_true", help="continue the run already in --run-dir")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config field, e.g. model.c_feat=64")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="sweep a trained checkpoint over test SNRs")
    e.add_argument("checkpoint")
    e.add_argument("--gamma-list", type=_float_list, default=[0.0, 2.0, 4.0, 6.0, 8.0])
    e.add_argument("--snr-sr", type=_float)
    e.add_argument("--subset", type=int)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--data-root")
    e.add_argument("--dataset", choices=["config", "natural"], default="config")
    e.add_argument("--separation", metavar="CODEC", help="also score the separation baseline (bpg, webp, auto)")
    e.add_argument("--model-id")
    e.add_argument("--out", default="eval")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("simulate", help="Monte-Carlo checks of the channel model")
    s.add_argument("--verify", choices=["mrc", "af-noise", "power", "all"], default="all")
    s.add_argument("--trials", type=float, default=1e6)
    s.add_argument("--snr-sr", type=_float, default=12.0)
    s.add_argument("--snr-sd", type=_float, default=5.0)
    s.add_argument("--snr-rd", type=_float, default=5.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    pl = sub.add_parser("plot", help="render tables and figures from record files")
    pl.add_argument("records", nargs="+")
    pl.add_argument("--out", default="plots")
    pl.add_argument("--stem", default="sweep")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CodecUnavailableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODEC
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, RelayJSCCError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
