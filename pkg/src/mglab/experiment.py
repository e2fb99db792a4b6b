"""Seeded experiment runner: configuration, per-seed runs and file emission.

A run directory holds ``manifest.json`` (the resolved configuration plus the
content hash of the game file), a copy of the game, ``curves.csv`` and
``report.json`` merged over seeds, a gnuplot script, and one ``seed-<n>``
subdirectory per seed with that seed's files.
"""

import csv
import hashlib
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .evaluators import certified_report, product_policy_report, to_plain
from .game import MarkovGame, game_from_json, game_to_json
from .validation import ValidationError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

ALGORITHMS = ("cce", "ce", "nash-ca", "ucbvi")
MANIFEST_VERSION = 1


@dataclass
class ExperimentConfig:
    """One experiment. Exactly one of ``game`` (a path) and ``generator`` is set."""

    algorithm: str
    seeds: list
    out: str
    game: str = None
    generator: dict = None
    K: int = None
    epsilon: float = None
    c: float = None
    iota: float = None
    p: float = 0.05
    cadence: object = "final"
    exact_gaps: bool = True
    mc_episodes: int = 0
    save_history: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValidationError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not isinstance(self.seeds, (list, tuple)) or not self.seeds:
            raise ValidationError("seeds must be a nonempty list")
        self.seeds = [int(s) for s in self.seeds]
        if len(set(self.seeds)) != len(self.seeds):
            raise ValidationError("seeds must be distinct")
        if (self.game is None) == (self.generator is None):
            raise ValidationError("give exactly one of 'game' and 'generator'")
        if self.algorithm == "nash-ca":
            if self.epsilon is None or not self.epsilon > 0:
                raise ValidationError("nash-ca needs a positive epsilon")
        else:
            if not isinstance(self.K, int) or self.K < 1:
                raise ValidationError(f"{self.algorithm} needs a positive integer K")
            if self.cadence != "final":
                if not isinstance(self.cadence, int) or self.cadence < 1 or self.K % self.cadence:
                    raise ValidationError("cadence must divide K or be \"final\"")
        if self.c is not None and not self.c > 0:
            raise ValidationError("c must be positive")
        if self.iota is not None and not self.iota > 0:
            raise ValidationError("iota must be positive")
        if not 0 < self.p < 1:
            raise ValidationError("p must lie in (0, 1)")
        if int(self.workers) < 1 or int(self.mc_episodes) < 0:
            raise ValidationError("workers must be >= 1 and mc_episodes >= 0")

    def checkpoints(self):
        if self.algorithm == "nash-ca":
            return []
        step = self.K if self.cadence == "final" else self.cadence
        return list(range(step, self.K + 1, step))

    @classmethod
    def from_dict(cls, doc, base_dir="."):
        doc = dict(doc)
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        for key in ("game", "out"):
            if doc.get(key) is not None:
                doc[key] = os.path.abspath(os.path.join(base_dir, doc[key]))
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ValidationError(f"bad config: {exc}") from exc


def git_blob_sha1(data):
    """Content hash of ``data`` as ``git hash-object`` computes it."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def load_config(path):
    """Read a TOML experiment file or a ``manifest.json`` written by a previous run.

    Returns ``(config, expected_game_hash or None)``.
    """
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    base = os.path.dirname(os.path.abspath(path))
    if path.endswith(".json"):
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid manifest {path}: {exc}") from exc
        if doc.get("version") != MANIFEST_VERSION or "config" not in doc:
            raise ValidationError(f"{path} is not a run manifest")
        return ExperimentConfig.from_dict(doc["config"], base), doc.get("game_sha1")
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ValidationError(f"invalid config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(doc, base), None


# -- game generation -----------------------------------------------------------

def generate_game_text(spec):
    """JSON text of a generated game.

    ``spec["kind"]`` is ``random`` (keys m, S, H, A, seed, bernoulli,
    cooperative), ``hard-one-step`` (m, k, epsilon) or ``hard-mdp``
    (m, k, epsilon, H). Hard games carry their good set ``D``.
    """
    from .hard_instances import hard_game, hard_game_to_json

    spec = dict(spec)
    kind = spec.pop("kind", None)
    try:
        if kind == "random":
            A = spec.pop("A")
            m = int(spec.pop("m"))
            A = (int(A),) * m if np.isscalar(A) else tuple(int(a) for a in A)
            game = MarkovGame.random(m, int(spec.pop("S")), int(spec.pop("H")), A,
                                     rng=int(spec.pop("seed", 0)),
                                     bernoulli=bool(spec.pop("bernoulli", False)),
                                     cooperative=bool(spec.pop("cooperative", False)))
            text = game_to_json(game)
        elif kind in ("hard-one-step", "hard-mdp"):
            g = hard_game(int(spec.pop("m")), int(spec.pop("k")), float(spec.pop("epsilon")))
            H = int(spec.pop("H")) if kind == "hard-mdp" else None
            text = hard_game_to_json(g, H)
        else:
            raise ValidationError(f"unknown generator kind {kind!r}")
    except KeyError as exc:
        raise ValidationError(f"generator {kind!r} is missing key {exc}") from exc
    if spec:
        raise ValidationError(f"unknown generator keys: {sorted(spec)}")
    return text


# -- formatting ----------------------------------------------------------------

def fmt_float(x):
    """17 significant digits; empty for missing values."""
    if x is None:
        return ""
    return format(float(x), ".17g")


def _csv_text(header, rows):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for row in rows:
        wr.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _json_text(doc):
    return json.dumps(to_plain(doc), indent=2, sort_keys=True) + "\n"


# -- per-seed runs -------------------------------------------------------------

@dataclass
class SeedOutput:
    seed: int
    header: list
    rows: list
    report: dict
    files: dict = field(default_factory=dict)  # extra name -> text or bytes


def _run_vlearning(cfg, game, seed):
    from .certified import certified_exact_value, certified_omniscient_deviation
    from .learners import ce_v_learning, cce_v_learning
    from .rng import RngStreams
    from .schedules import ScheduleParams

    c = 0.5 if cfg.c is None else cfg.c
    eps = 0.05 if cfg.epsilon is None else cfg.epsilon
    params = ScheduleParams.for_game(game, cfg.K, c, cfg.iota, cfg.p, eps)
    streams = RngStreams(seed)
    learn = ce_v_learning if cfg.algorithm == "ce" else cce_v_learning
    hist = learn(game, params, streams.child("learn"))
    curve = hist.confidence_gap_curve()
    mode = "best-modification" if cfg.algorithm == "ce" else "best-response"
    header = ["episode"] + [f"confidence_gap_{i}" for i in range(game.m)]
    if cfg.exact_gaps:
        header += [f"exact_gap_{i}" for i in range(game.m)]
    rows = []
    for k in cfg.checkpoints():
        row = [k] + [float(x) for x in curve[k - 1]]
        if cfg.exact_gaps:
            sub = hist if k == hist.K else hist.truncate(k)
            val = certified_exact_value(game, sub)
            row += [certified_omniscient_deviation(game, sub, i, mode) - float(val[i])
                    for i in range(game.m)]
        rows.append(row)
    report = certified_report(game, hist, kind=cfg.algorithm, mc_episodes=cfg.mc_episodes,
                              rng=streams.child("eval"))
    doc = report.to_dict()
    doc["params"] = {"K": params.K, "H": params.H, "iota": params.iota, "c": params.c}
    if cfg.algorithm == "ce":
        doc["max_fixed_point_residual"] = hist.diagnostics["max_fixed_point_residual"]
    out = SeedOutput(seed, header, rows, doc)
    if cfg.save_history:
        out.files["history.npz"] = hist.to_bytes(game)
    return out


def _run_ucbvi(cfg, game, seed):
    from .game import MarkovProductPolicy
    from .mpg import deterministic_policy, optimal_values, ucbvi_uplow
    from .rng import RngStreams

    if game.m != 1:
        raise ValidationError("ucbvi runs on one-player games")
    c = 0.1 if cfg.c is None else cfg.c
    iota = cfg.iota
    if iota is None:
        iota = float(np.log(game.S * game.A[0] * game.H * cfg.K / cfg.p))
    streams = RngStreams(seed)
    v_star = optimal_values(game)[0][0, game.s1]

    def learn(K):
        # uniforms are drawn row by row, so a shorter run replays a prefix
        return ucbvi_uplow(game, K, c, iota, rng=streams.fresh("ucbvi"))

    res = learn(cfg.K)
    header = ["episode", "confidence_gap_0"] + (["exact_gap_0"] if cfg.exact_gaps else [])
    bracket = np.minimum.accumulate(res.upper - res.lower)
    rows = []
    for k in cfg.checkpoints():
        row = [k, float(bracket[k - 1])]
        if cfg.exact_gaps:
            acts = res.actions if k == cfg.K else learn(k).actions
            pol = MarkovProductPolicy([deterministic_policy(acts, game.A[0])])
            row.append(float(v_star - product_policy_report(game, pol).players[0].exact_value))
        rows.append(row)
    pol = MarkovProductPolicy([res.policy_table()])
    doc = product_policy_report(game, pol).to_dict()
    doc.update({"k_star": res.k_star, "iota": res.iota, "c": c, "optimal_value": float(v_star),
                "bracket_always_ordered": bool(np.all(res.upper >= res.lower))})
    return SeedOutput(seed, header, rows, doc)


def _run_nash_ca(cfg, game, seed):
    from .game import ne_gap
    from .mpg import NashCaConfig, deterministic_policy, nash_ca
    from .game import MarkovProductPolicy
    from .rng import RngStreams

    nc = NashCaConfig(cfg.epsilon, cfg.p, c=0.1 if cfg.c is None else cfg.c, iota=cfg.iota)
    res = nash_ca(game, nc, RngStreams(seed))
    header = ["episode", "iteration", "player", "delta", "accepted"]
    if cfg.exact_gaps:
        header.append("exact_ne_gap")
    rows = []
    for row in res.audit:
        r = [row["episodes"], row["iteration"], row["player"], float(row["delta"]), int(row["accepted"])]
        if cfg.exact_gaps:
            pol = MarkovProductPolicy([deterministic_policy(a, game.A[i])
                                       for i, a in enumerate(row["actions"])])
            r.append(float(ne_gap(game, pol)))
        rows.append(r)
    doc = product_policy_report(game, res.policy).to_dict()
    doc.update({"certified": res.certified, "iterations": res.iterations, "cap": res.cap,
                "episodes": res.episodes, "pure": res.policy.is_pure,
                "actions": [a.tolist() for a in res.policy.actions()]})
    return SeedOutput(seed, header, rows, doc)


RUNNERS = {"cce": _run_vlearning, "ce": _run_vlearning, "ucbvi": _run_ucbvi,
           "nash-ca": _run_nash_ca}


def run_seed(cfg, game, seed):
    """Run one seed and return its in-memory outputs."""
    return RUNNERS[cfg.algorithm](cfg, game, seed)


# -- whole runs ----------------------------------------------------------------

GNUPLOT_TEMPLATE = """\
# gnuplot script: gnuplot -p plot.gp
set datafile separator ","
set key autotitle columnhead
set xlabel "episode"
set logscale xy
plot {plots}
"""


def _gnuplot(header, has_seed):
    off = 1 if has_seed else 0
    cols = [j for j, name in enumerate(header) if "gap" in name]
    plots = ", ".join(f'"curves.csv" using {1 + off}:{j + 1 + off} with linespoints' for j in cols)
    return GNUPLOT_TEMPLATE.format(plots=plots or '"curves.csv" using 2:3')


def _write(path, data):
    mode = "wb" if isinstance(data, bytes) else "w"
    kw = {} if mode == "wb" else {"newline": ""}
    with open(path, mode, **kw) as f:
        f.write(data)


def resolve_game(cfg, expected_sha1=None):
    """``(game, json bytes)`` of the configured game; checks the manifest hash."""
    if cfg.generator is not None:
        data = generate_game_text(cfg.generator).encode()
    else:
        try:
            with open(cfg.game, "rb") as f:
                data = f.read()
        except OSError as exc:
            raise ValidationError(f"cannot read game file {cfg.game}: {exc}") from exc
    if expected_sha1 is not None and git_blob_sha1(data) != expected_sha1:
        raise ValidationError("game file content does not match the manifest hash")
    return game_from_json(data.decode("utf-8")), data


def run(cfg, expected_sha1=None):
    """Execute every seed (threads fan out per ``cfg.workers``) and write the run directory."""
    game, data = resolve_game(cfg, expected_sha1)
    os.makedirs(cfg.out, exist_ok=True)
    game_path = os.path.join(cfg.out, "game.json")
    if not (os.path.exists(game_path) and cfg.game and os.path.samefile(game_path, cfg.game)):
        _write(game_path, data)
    with ThreadPoolExecutor(max_workers=int(cfg.workers)) as pool:
        outputs = list(pool.map(lambda s: run_seed(cfg, game, s), cfg.seeds))

    merged_rows = []
    reports = {}
    for out in outputs:
        d = os.path.join(cfg.out, f"seed-{out.seed}")
        os.makedirs(d, exist_ok=True)
        _write(os.path.join(d, "curves.csv"), _csv_text(out.header, out.rows))
        _write(os.path.join(d, "report.json"), _json_text(out.report))
        for name, blob in out.files.items():
            _write(os.path.join(d, name), blob)
        merged_rows += [[out.seed] + r for r in out.rows]
        reports[str(out.seed)] = out.report
    header = ["seed"] + outputs[0].header
    _write(os.path.join(cfg.out, "curves.csv"), _csv_text(header, merged_rows))
    _write(os.path.join(cfg.out, "report.json"), _json_text({"seeds": reports}))
    _write(os.path.join(cfg.out, "plot.gp"), _gnuplot(outputs[0].header, True))
    echo = asdict(cfg)
    echo["game"] = os.path.abspath(game_path)
    echo["generator"] = None
    manifest = {"version": MANIFEST_VERSION, "config": echo, "game_sha1": git_blob_sha1(data),
                "generated_from": cfg.generator}
    _write(os.path.join(cfg.out, "manifest.json"), _json_text(manifest))
    return outputs
