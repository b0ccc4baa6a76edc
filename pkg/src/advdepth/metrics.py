"""Depth error metrics and the benign / attacked / transfer evaluation protocol."""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .adversary import run_attack
from .errors import ConfigError, ContractError

DELTA_THRESHOLD = 1.25


@dataclass
class MetricsReport:
    abse: float
    rmse: float
    absr: float
    sqr: float
    delta: float
    n_pixels: int
    region: str = "object"

    def to_dict(self):
        return asdict(self)


def compute_metrics(X, Y, mask=None, region="object"):
    """Compare estimate ``X`` with reference ``Y`` over ``mask``-true pixels."""
    x = np.asarray(X, dtype=np.float64)
    y = np.asarray(Y, dtype=np.float64)
    if x.shape != y.shape:
        raise ContractError(f"depth maps differ in shape: {x.shape} vs {y.shape}")
    m = np.ones(x.shape, dtype=bool) if mask is None else np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    x, y = x[m], y[m]
    if x.size == 0:
        raise ContractError("metrics over an empty region")
    if np.any(y <= 0):
        raise ContractError("reference depth must be positive on the region")
    diff = x - y
    ad = np.abs(diff)
    sq = diff * diff
    with np.errstate(divide="ignore"):
        ratio = np.maximum(x / y, y / x)
    return MetricsReport(
        abse=float(ad.mean()),
        rmse=float(math.sqrt(sq.mean())),
        absr=float((ad / y).mean()),
        sqr=float((sq / y).mean()),
        delta=float((ratio < DELTA_THRESHOLD).mean()),
        n_pixels=int(x.size),
        region=region,
    )


def mean_report(reports, region=None):
    if not reports:
        raise ContractError("no reports to average")
    keys = ("abse", "rmse", "absr", "sqr", "delta")
    avg = {k: float(np.mean([getattr(r, k) for r in reports])) for k in keys}
    return MetricsReport(**avg, n_pixels=int(sum(r.n_pixels for r in reports)),
                         region=region or reports[0].region)


@dataclass
class Evaluation:
    mean: MetricsReport
    per_scene: list = field(default_factory=list)
    attack: dict = None

    def to_dict(self):
        return {"mean": self.mean.to_dict(), "per_scene": [r.to_dict() for r in self.per_scene],
                "attack": self.attack}


def eval_scenes(source, board, n, seed):
    """``n`` scenes from a seeded fork of ``source``; the same list for every net."""
    if n < 1:
        raise ConfigError("eval.n_scenes", "must be >= 1")
    src = source.fork(seed)
    return [src.draw(board) for _ in range(n)]


def generate_adversarial_board(net, board, cfg, source):
    """One EoT perturbation of ``board`` against ``net``; returns ``(board, report)``."""
    return run_attack(net, board, source, cfg)


def _map(fn, items, threads):
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


def evaluate_board(net, adv_board, scenes, threads=1):
    """Object-region metrics of ``D(I'_t)`` against the benign prediction ``D(I_t)``, per scene."""
    target = net.frozen(share=True)

    def one(s):
        benign = target.predict(s.image_t)
        attacked = target.predict(s.render_target(adv_board.image).data)
        return compute_metrics(attacked, benign, s.region[None], "object")

    return _map(one, scenes, threads)


def evaluate_attack(net, board, cfg, source, n_scenes=100, seed=0, threads=1):
    """Attack ``net`` once (EoT over ``source``) and score the result on ``n_scenes`` held-out scenes."""
    if cfg is None:
        adv, info = board, None
    else:
        adv, rep = generate_adversarial_board(net, board, cfg, source)
        info = {k: v for k, v in rep.to_dict().items() if k != "per_step_loss"}
    scenes = eval_scenes(source, board, n_scenes, seed)
    per = evaluate_board(net, adv, scenes, threads)
    return Evaluation(mean_report(per), per, info)


def evaluate_benign(net, board, source, n_scenes=100, seed=0, threads=1):
    """Full-frame metrics against ground-truth depth on synthetic scenes."""
    scenes = eval_scenes(source, board, n_scenes, seed)
    target = net.frozen(share=True)

    def one(s):
        gt = s.depth_t()
        if gt is None:
            raise ContractError("benign evaluation needs ground-truth background depth")
        return compute_metrics(target.predict(s.image_t), gt, None, "full")

    per = _map(one, scenes, threads)
    return Evaluation(mean_report(per), per)


def transfer_matrix(nets, board, cfg, source, n_scenes=100, seed=0, threads=1):
    """``M[i][j]``: attack generated on ``nets[i]``, evaluated on ``nets[j]``."""
    if not nets:
        raise ConfigError("checkpoints", "need at least one network")
    scenes = eval_scenes(source, board, n_scenes, seed)
    matrix = []
    for src_net in nets:
        adv, _ = generate_adversarial_board(src_net, board, cfg, source)
        matrix.append([mean_report(evaluate_board(dst, adv, scenes, threads)) for dst in nets])
    return matrix


def format_table(rows, columns, cells, title=None):
    """Fixed-width table; ``cells[i][j]`` is a :class:`MetricsReport` shown as ``ABSE/delta``."""
    w0 = max([len(r) for r in rows] + [8])
    wc = max([len(c) for c in columns] + [15])
    lines = []
    if title:
        lines.append(title)
    lines.append(" " * w0 + " | " + " | ".join(c.rjust(wc) for c in columns))
    lines.append("-" * len(lines[-1]))
    for name, row in zip(rows, cells):
        vals = [f"{r.abse:8.4f}/{r.delta:6.4f}".rjust(wc) for r in row]
        lines.append(name.ljust(w0) + " | " + " | ".join(vals))
    return "\n".join(lines) + "\n"


__all__ = ["DELTA_THRESHOLD", "Evaluation", "MetricsReport", "compute_metrics",
           "eval_scenes", "evaluate_attack", "evaluate_benign", "evaluate_board", "format_table",
           "generate_adversarial_board", "mean_report", "transfer_matrix"]
