"""Command-line front end: ``advdepth synthesize|attack|train|evaluate|metrics``.

Exit codes: 0 ok, 1 other runtime failure, 2 bad configuration, 3 I/O or
file-format error, 4 numeric failure (NaN loss).
"""
import argparse
import json
import logging
import os
import sys
import tempfile

import numpy as np

from . import model as model_io
from .adversary import run_attack
from .config import load_config
from .errors import AdvDepthError, ConfigError, FormatError, NumericError
from .metrics import compute_metrics, evaluate_attack, evaluate_benign, format_table, transfer_matrix
from .scene import load_mask_png, save_png
from .tensor import dumps_tensor, load_tensor
from .trainer import harden

logger = logging.getLogger("advdepth")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4


# -- atomic output helpers ---------------------------------------------------------

def _atomic_write(path, data):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path, obj):
    _atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _write_png(path, img):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".png")
    os.close(fd)
    try:
        save_png(tmp, img)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- subcommands --------------------------------------------------------------------

def cmd_synthesize(cfg, args):
    out = cfg.output_dir
    bgs = cfg.backgrounds()
    source = cfg.train_source(bgs)
    boards = cfg.board_pool()
    records = []
    for i in range(args.n):
        s = source.draw(boards)
        name = f"scene_{i:03d}"
        _write_png(os.path.join(out, f"{name}_t.png"), s.image_t)
        _write_png(os.path.join(out, f"{name}_s.png"), s.image_s)
        _write_png(os.path.join(out, f"{name}_mask_t.png"), s.proj_t.region[None].astype(np.float64))
        _write_png(os.path.join(out, f"{name}_mask_s.png"), s.proj_s.region[None].astype(np.float64))
        bi = next(j for j, b in enumerate(boards) if b is s.board)
        rec = {"name": name, "board": bi, "z_c": s.placement.z_c,
               "alpha_deg": float(np.degrees(s.placement.alpha)), "region_pixels": int(s.region.sum())}
        records.append(rec)
        print(f"{name}: board={rec['board']} z_c={rec['z_c']:.4f} m alpha={rec['alpha_deg']:.4f} deg "
              f"region={rec['region_pixels']} px")
    _write_json(os.path.join(out, "placements.json"), records)
    return EXIT_OK


def cmd_attack(cfg, args):
    net = model_io.load(args.checkpoint)
    board = cfg.target_board()
    source = cfg.train_source()
    reports = []
    for i, acfg in enumerate(cfg.attacks):
        adv, rep = run_attack(net, board, source, acfg)
        tag = f"{i:02d}_{acfg.kind}"
        _write_png(os.path.join(cfg.output_dir, f"board_{tag}.png"), adv.image)
        _atomic_write(os.path.join(cfg.output_dir, f"delta_{tag}.dhtn"), dumps_tensor(adv.image - board.image))
        d = rep.to_dict()
        reports.append({"attack": tag, **d})
        print(f"{tag}: adv_loss={rep.final_adv_loss:.6g} perturbed_fraction={rep.perturbed_fraction:.4f}")
    _write_json(os.path.join(cfg.output_dir, "attack_report.json"), reports)
    return EXIT_OK


def cmd_train(cfg, args):
    if args.init:
        net = model_io.load(args.init)
    elif cfg.init_checkpoint:
        net = model_io.load(cfg._path(cfg.init_checkpoint))
    else:
        net = model_io.DepthNet(seed=cfg.seed)
    source = cfg.train_source()
    boards = cfg.board_pool()

    def progress(rec):
        if rec["step"] % max(1, cfg.train.steps // 20) == 0:
            logger.info("step %d loss %.6g", rec["step"], rec["loss"])

    harden(net, boards, source, cfg.train, out_dir=cfg.output_dir, callback=progress)
    print(f"wrote {os.path.join(cfg.output_dir, 'final.dhck')}")
    return EXIT_OK


def cmd_evaluate(cfg, args):
    nets = [model_io.load(p) for p in args.checkpoints]
    names = [os.path.basename(p) for p in args.checkpoints]
    board = cfg.target_board()
    bgs = cfg.backgrounds()
    ev_src = cfg.eval_source(bgs)
    e = cfg.eval
    threads = args.threads
    result = {"models": names, "benign": {}, "attacks": []}
    benign_row = []
    for name, net in zip(names, nets):
        ev = evaluate_benign(net, board, ev_src, e.n_scenes, e.seed, threads)
        result["benign"][name] = ev.mean.to_dict()
        benign_row.append(ev.mean)
    rows, cells = [], []
    for i, acfg in enumerate(cfg.attacks):
        tag = f"{acfg.kind} eps={acfg.epsilon:g}"
        row = []
        for name, net in zip(names, nets):
            ev = evaluate_attack(net, board, acfg, ev_src, e.n_scenes, e.seed, threads)
            row.append(ev.mean)
            result["attacks"].append({"attack": tag, "model": name, "mean": ev.mean.to_dict(),
                                      "attack_report": ev.attack})
        rows.append(tag)
        cells.append(row)
    text = format_table(["benign (vs GT)"], names, [benign_row], "Benign depth error, full frame (ABSE/delta)")
    text += "\n" + format_table(rows, names, cells, "Attacked vs benign prediction, object region (ABSE/delta)")
    if len(nets) >= 2:
        result["transfer"] = []
        for acfg in cfg.attacks:
            tag = f"{acfg.kind} eps={acfg.epsilon:g}"
            m = transfer_matrix(nets, board, acfg, ev_src, e.n_scenes, e.seed, threads)
            result["transfer"].append({"attack": tag, "source_rows": names,
                                       "matrix": [[c.to_dict() for c in row] for row in m]})
            text += "\n" + format_table([f"from {n}" for n in names], [f"on {n}" for n in names], m,
                                        f"Transfer, {tag} (ABSE/delta)")
    _write_json(os.path.join(cfg.output_dir, "metrics.json"), result)
    _atomic_write(os.path.join(cfg.output_dir, "metrics.txt"), text.encode())
    sys.stdout.write(text)
    return EXIT_OK


def cmd_metrics(args):
    x = load_tensor(args.estimate)
    y = load_tensor(args.reference)
    mask = None
    if args.mask:
        mask = load_mask_png(args.mask) > 0.5 if args.mask.endswith(".png") else load_tensor(args.mask) > 0.5
    rep = compute_metrics(x, y, mask, "object" if mask is not None else "full")
    text = json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        _atomic_write(args.out, text.encode())
    sys.stdout.write(text)
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------

def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(args):
    ov = []
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(item, "--set expects KEY=VALUE")
        k, v = item.split("=", 1)
        ov.append((k.strip(), _parse_value(v)))
    if args.seed is not None:
        ov.append(("seed", args.seed))
    if args.out is not None:
        ov.append(("output_dir", os.path.abspath(args.out)))
    if getattr(args, "steps", None) is not None:
        ov.append(("train.steps", args.steps))
    if getattr(args, "mode", None) is not None:
        ov.append(("train.mode", args.mode))
    if getattr(args, "lr", None) is not None:
        ov.append(("train.lr", args.lr))
    if getattr(args, "n_scenes", None) is not None:
        ov.append(("eval.n_scenes", args.n_scenes))
    return ov


def build_parser():
    p = argparse.ArgumentParser(prog="advdepth", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_config=True):
        if with_config:
            sp.add_argument("--config", "-c", help="TOML or JSON experiment config")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                            help="override a config field, e.g. --set train.batch_size=2 (repeatable)")
            sp.add_argument("--seed", type=int, help="override the top-level seed")
            sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads for per-scene evaluation (default: available cores)")

    sp = sub.add_parser("synthesize", help="write stamped I_t / I_s scene pairs and masks")
    common(sp)
    sp.add_argument("--n", type=int, default=5, help="number of scene pairs (default 5)")

    sp = sub.add_parser("attack", help="perturb the target board against a checkpoint")
    common(sp)
    sp.add_argument("checkpoint", help="depth-net checkpoint (.dhck)")

    sp = sub.add_parser("train", help="benign, selfsup or sup_pseudo training")
    common(sp)
    sp.add_argument("--init", help="start from this checkpoint instead of a fresh net")
    sp.add_argument("--steps", type=int, help="override train.steps")
    sp.add_argument("--mode", choices=("selfsup", "sup_pseudo", "benign"), help="override train.mode")
    sp.add_argument("--lr", type=float, help="override train.lr")

    sp = sub.add_parser("evaluate", help="benign and attacked metrics; transfer matrix for >= 2 checkpoints")
    common(sp)
    sp.add_argument("checkpoints", nargs="+", help="one or more checkpoints")
    sp.add_argument("--n-scenes", type=int, help="override eval.n_scenes")

    sp = sub.add_parser("metrics", help="depth metrics between two tensor dumps")
    common(sp, with_config=False)
    sp.add_argument("estimate", help="estimated depth (.dhtn)")
    sp.add_argument("reference", help="reference depth (.dhtn)")
    sp.add_argument("--mask", help="region mask (.dhtn or .png); default full frame")
    sp.add_argument("--out", help="also write the JSON report here")
    return p


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "metrics":
            return cmd_metrics(args)
        cfg = load_config(args.config, _overrides(args))
        handler = {"synthesize": cmd_synthesize, "attack": cmd_attack, "train": cmd_train,
                   "evaluate": cmd_evaluate}[args.command]
        return handler(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except AdvDepthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
