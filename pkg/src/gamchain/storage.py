"""CSV serialisation of engine posteriors and small JSON helpers.

Layouts (one row per time step ``t``, 0-based):

* gamma (C3): ``t,a_u,b_u,a_v,b_v``; the v columns are empty on the last row
* gaussian (C1): ``t,mu,sigma2``
* particles (C2/C4): ``t,log_u_0..log_u_{N-1},w_0..w_{N-1}`` with smoothed weights
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import InputError
from .laplace import GaussianPosterior
from .mc import ParticleCloud
from .vi import GammaPosterior


def _fmt(x: float) -> str:
    return repr(float(x))


def write_posterior_csv(posterior, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if isinstance(posterior, GammaPosterior):
            w.writerow(["t", "a_u", "b_u", "a_v", "b_v"])
            n = posterior.a_u.size
            for t in range(n):
                tail = ([_fmt(posterior.a_v[t]), _fmt(posterior.b_v[t])] if t < n - 1 else ["", ""])
                w.writerow([t, _fmt(posterior.a_u[t]), _fmt(posterior.b_u[t])] + tail)
        elif isinstance(posterior, GaussianPosterior):
            w.writerow(["t", "mu", "sigma2"])
            for t, (m, s) in enumerate(zip(posterior.mu, posterior.sigma2)):
                w.writerow([t, _fmt(m), _fmt(s)])
        elif isinstance(posterior, ParticleCloud):
            n = posterior.n_particles
            w.writerow(["t"] + [f"log_u_{i}" for i in range(n)] + [f"w_{i}" for i in range(n)])
            for t in range(len(posterior)):
                w.writerow([t] + [_fmt(x) for x in posterior.log_u[t]] + [_fmt(x) for x in posterior.weights[t]])
        else:
            raise InputError(f"cannot serialise posterior of type {type(posterior).__name__}")
    return path


def read_posterior_csv(path: str | Path):
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: posterior file not found; run `fit` first")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise InputError(f"{path}: posterior file has no rows")
    header, body = rows[0], rows[1:]
    try:
        if header == ["t", "a_u", "b_u", "a_v", "b_v"]:
            a_u = np.array([float(r[1]) for r in body])
            b_u = np.array([float(r[2]) for r in body])
            a_v = np.array([float(r[3]) for r in body[:-1]])
            b_v = np.array([float(r[4]) for r in body[:-1]])
            post = GammaPosterior(a_u, b_u, a_v, b_v)
            post.validate()
            return post
        if header == ["t", "mu", "sigma2"]:
            post = GaussianPosterior(np.array([float(r[1]) for r in body]),
                                     np.array([float(r[2]) for r in body]))
            post.validate()
            return post
        if header and header[0] == "t" and len(header) % 2 == 1 and header[1] == "log_u_0":
            n = (len(header) - 1) // 2
            data = np.array([[float(x) for x in r[1:]] for r in body])
            return ParticleCloud(data[:, :n].copy(), data[:, n:].copy(), "smoothed")
    except (ValueError, IndexError) as exc:
        raise InputError(f"{path}: malformed posterior file ({exc})") from None
    raise InputError(f"{path}: unrecognised posterior header")


def write_json(obj: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
