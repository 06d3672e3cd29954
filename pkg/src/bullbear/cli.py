"""Command-line entry points: ``train``, ``backtest``, ``analyze`` and ``grid``.

Every command writes under ``--out`` (per-stock subdirectories) and finishes
with an atomically written ``manifest_<command>.json``.  Log verbosity comes
from the ``BULLBEAR_LOG`` environment variable.
"""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import analytics as an
from . import backtest as bt
from .config import load_config
from .errors import BullBearError, CheckpointError, ConfigError
from .ingest import build_samples, load_industry_map, load_news, load_prices, split_chronological
from .model import AttentionMaps, B4Model, bias_attention, load_checkpoint, save_checkpoint
from .training import GRID_COLUMNS, Trainer, evaluate, grid_search, iter_batches, predict, signals_for

log = logging.getLogger("bullbear")


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_atomic(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


class Run:
    """Collects outputs, metrics and errors for one command invocation."""

    def __init__(self, command, config, out):
        self.command = command
        self.config = config
        self.out = Path(out)
        self.started = dt.datetime.now(dt.timezone.utc).isoformat()
        self.files = []
        self.metrics = {}
        self.errors = []
        self.counters = {}

    def add(self, *paths):
        self.files.extend(Path(p) for p in paths)

    def finish(self):
        manifest = {
            "command": self.command,
            "config": self.config.as_dict(),
            "versions": {"bullbear": __version__, "numpy": np.__version__,
                         "python": sys.version.split()[0]},
            "started": self.started,
            "finished": dt.datetime.now(dt.timezone.utc).isoformat(),
            "metrics": self.metrics,
            "counters": self.counters,
            "errors": self.errors,
            "files": {str(p.relative_to(self.out)): sha256(p) for p in sorted(self.files)},
        }
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / f"manifest_{self.command}.json"
        write_atomic(path, json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
        return path


def stocks_of(cfg, news):
    if cfg.run.stocks:
        return list(cfg.run.stocks)
    found = news.stocks() if news is not None else []
    if not found:
        raise ConfigError("no stocks configured: set run.stocks or pass --stock")
    return found


def read_news(cfg):
    if not cfg.paths.news:
        return None
    return load_news(cfg.paths.news, topics=cfg.paths.topics or None)


def stock_samples(cfg, stock, news):
    if not cfg.paths.prices:
        raise ConfigError("paths.prices is not set")
    bars = load_prices(cfg.paths.prices.format(stock=stock))
    samples = build_samples(bars, news, cfg.model.delta, stock=stock, ties=cfg.run.ties)
    return bars, samples


def checkpoint_path(cfg, stock, override=None):
    if override:
        return Path(override.format(stock=stock))
    return Path(cfg.paths.out) / stock / "checkpoint.json"


def cmd_train(cfg, args):
    out = Path(cfg.paths.out)
    run = Run("train", cfg, out)
    news = read_news(cfg)
    batches = 0
    for stock in stocks_of(cfg, news):
        bars, samples = stock_samples(cfg, stock, news)
        split = split_chronological(samples, cfg.run.split_ratio)
        model = B4Model(cfg.model, seed=cfg.training.seed)
        data = model.prepare(split.train)
        trainer = Trainer(model, cfg.training)
        trainer.fit(data)
        sdir = out / stock
        sdir.mkdir(parents=True, exist_ok=True)
        ck = sdir / "checkpoint.json"
        save_checkpoint(model, ck)
        traj = sdir / "loss_trajectory.csv"
        with traj.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "batch", "comp", "mar", "ce", "total"])
            for e, parts in enumerate(trainer.history):
                for b, p in enumerate(parts):
                    w.writerow([e, b, repr(p.comp), repr(p.mar), repr(p.ce), repr(p.total)])
        run.add(ck, traj)
        n = sum(len(p) for p in trainer.history)
        batches += n
        first = trainer.history[0] if trainer.history else []
        last = trainer.history[-1] if trainer.history else []
        run.metrics[stock] = {
            "train_samples": len(split.train),
            "batches": n,
            "initial_loss": float(np.mean([p.total for p in first])) if first else None,
            "final_loss": float(np.mean([p.total for p in last])) if last else None,
        }
        log.info("%s: trained %d batches", stock, n)
    run.counters["batches"] = batches
    return run


def cmd_backtest(cfg, args):
    out = Path(cfg.paths.out)
    run = Run("backtest", cfg, out)
    news = read_news(cfg)
    for stock in stocks_of(cfg, news):
        bars, samples = stock_samples(cfg, stock, news)
        split = split_chronological(samples, cfg.run.split_ratio)
        model = load_checkpoint(checkpoint_path(cfg, stock, args.checkpoint), expect=cfg.model)
        data = model.prepare(split.test)
        mode = cfg.backtest.mode
        if args.flat:
            positions = np.zeros(len(data), dtype=np.int64)
            acc = None
        else:
            up, down, positions = predict(model, data, mode)
            acc = float(np.mean((up > down).astype(int) == data.labels))
        signals = signals_for(split.test, positions)
        curve = bt.run_backtest(signals, bars, mode)
        metrics = bt.compute_metrics(curve, cfg.backtest.convention)
        run.add(*bt.write_report(curve, signals, bars, metrics, mode, out / stock))
        hold = bt.run_backtest([bt.Signal(s.date, 1) for s in split.test], bars, "long-flat")
        run.metrics[stock] = {**metrics.as_dict(), "accuracy": acc,
                              "always_long_cumulative": float(hold.values[-1] / hold.values[0] - 1)}
    return run


def cmd_analyze(cfg, args):
    out = Path(cfg.paths.out)
    run = Run("analyze", cfg, out)
    news = read_news(cfg)
    records = []
    for stock in stocks_of(cfg, news):
        _, samples = stock_samples(cfg, stock, news)
        model = load_checkpoint(checkpoint_path(cfg, stock, args.checkpoint), expect=cfg.model)
        data = model.prepare(samples)
        for start, stop in iter_batches(len(data), 128):
            batch = data.batch(start, stop)
            fwd = model.forward(batch)
            maps = bias_attention(fwd.heads, fwd.h)
            for k, s in enumerate(batch.samples):
                records.append((stock, s.date, AttentionMaps(maps.a_bu[k], maps.a_be[k]),
                                batch.tokens[k], s.news))
    if not records:
        raise ConfigError("no samples to analyze")
    windows = an.equal_windows([r[1] for r in records], cfg.analytics.windows)
    panel = an.build_panel(records, windows, cfg.analytics.aggregation)
    imap = load_industry_map(cfg.paths.industry_map) if cfg.paths.industry_map else None
    am = an.migration(panel)
    if imap is not None:
        an.bias_scores(panel, imap)  # asserts the IBias identity
    run.add(*an.emit_reports(panel, am, imap, out / "analytics"))
    run.counters.update({"panel_entries": len(panel), "migration_entries": len(am),
                         "windows": len(windows)})
    return run


def cmd_grid(cfg, args):
    out = Path(cfg.paths.out)
    run = Run("grid", cfg, out)
    news = read_news(cfg)
    base = cfg.training if cfg.grid.epochs is None else replace(cfg.training, epochs=cfg.grid.epochs)
    for stock in stocks_of(cfg, news):
        bars, samples = stock_samples(cfg, stock, news)
        split = split_chronological(samples, cfg.run.split_ratio)
        inner = split_chronological(split.train, cfg.grid.validation_ratio)
        results = grid_search(cfg.grid.alphas, cfg.grid.spans, inner.train, inner.test, bars,
                              cfg.model, base, cfg.backtest.mode, cfg.backtest.convention, split.test)
        sdir = out / stock
        sdir.mkdir(parents=True, exist_ok=True)
        path = sdir / "grid_results.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(GRID_COLUMNS)
            for r in results:
                w.writerow([repr(r.alpha), r.span, repr(r.cumulative_return), repr(r.annual_return),
                            repr(r.max_drawdown), "" if r.calmar is None else repr(r.calmar),
                            repr(r.final_loss), r.seed, repr(r.accuracy), repr(r.test_accuracy), int(r.best)])
        run.add(path)
        best = results[0]
        run.metrics[stock] = {"runs": len(results), "best_alpha": best.alpha, "best_span": best.span,
                              "best_cumulative_return": best.cumulative_return,
                              "max_test_accuracy": max(r.test_accuracy for r in results)}
    return run


COMMANDS = {"train": cmd_train, "backtest": cmd_backtest, "analyze": cmd_analyze, "grid": cmd_grid}


def build_parser():
    p = argparse.ArgumentParser(prog="bullbear", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI config file")
        sp.add_argument("--out", help="output directory (overrides paths.out)")
        sp.add_argument("--seed", type=int, help="training seed (overrides training.seed)")
        sp.add_argument("--stock", action="append", help="ticker to process; repeatable")
        sp.add_argument("--epochs", type=int, help="override training.epochs")
        if name in ("backtest", "analyze"):
            sp.add_argument("--checkpoint", help="checkpoint path; may contain {stock}")
        if name == "backtest":
            sp.add_argument("--flat", action="store_true", help="ignore the model and stay flat")
    return p


def main(argv=None):
    logging.basicConfig(level=os.environ.get("BULLBEAR_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.out:
        overrides.setdefault("paths", {})["out"] = args.out
    if args.seed is not None:
        overrides.setdefault("training", {})["seed"] = args.seed
    if args.epochs is not None:
        overrides.setdefault("training", {})["epochs"] = args.epochs
    if args.stock:
        overrides.setdefault("run", {})["stocks"] = ",".join(args.stock)
    try:
        cfg = load_config(args.config, overrides)
        run = COMMANDS[args.command](cfg, args)
    except (ConfigError, CheckpointError) as exc:
        print(f"bullbear {args.command}: {exc}", file=sys.stderr)
        return 2
    except (BullBearError, OSError) as exc:
        print(f"bullbear {args.command}: {exc}", file=sys.stderr)
        return 1
    run.finish()
    return 0 if not run.errors else 1


if __name__ == "__main__":
    sys.exit(main())
