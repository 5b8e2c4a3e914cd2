"""``pgnet`` command line: simulate, fish, train, fuse, evaluate, inspect, replay.

Every command stores its fully resolved parameters in a manifest
(``"schema": 1``) next to its outputs; ``pgnet replay MANIFEST`` reruns it.
Exit codes: 0 ok, 2 configuration error, 3 I/O or format error,
4 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from . import degradation as deg
from .baselines import bicubic_baseline, sfim
from .checkpoint import load_checkpoint
from .errors import ConfigError, FormatError, NumericalError
from .metrics import MetricsReport, all_metrics
from .model import Pgnet, PgnetConfig
from .raster_io import cube_paths, default_bands, read_cube, write_cube, write_quicklook
from .scenes import SCENE_SHARPNESS, SCENE_SMOOTHNESS, synthetic_scene
from .tensor import Tensor, no_grad
from .training import TrainConfig, evaluate, train
from .unmixing import (DEFAULT_ENDMEMBERS, DEFAULT_PIXELS, FishScatter, abundance_std, effective_srf,
                       fish_scatter, fish_summary, synthetic_endmembers, synthetic_wavelengths)

log = logging.getLogger("pgnet")

SCHEMA = 1
EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
TAPS = ("upsample", "pdin", "attention")
DEFAULT_HR_PATCH = 64
DEFAULT_TRAIN_FRACTION = 0.8


# -- helpers ---------------------------------------------------------------

def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _cube_digest(path) -> str:
    side, payload = cube_paths(path)
    return _sha256(side) + ":" + _sha256(payload)


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def input_digests(command: str, p: Dict) -> Dict[str, str]:
    """Content hashes of every file a command reads, keyed by role."""
    cubes, files = [], []
    if command == "simulate":
        cubes = ["input"] if p.get("input") else []
        files = ["srf"] if p.get("srf", "uniform") != "uniform" else []
    elif command == "train":
        data = Path(p["data"])
        out = {k: _cube_digest(data / k) for k in ("hr", "lr", "pan")}
        if (data / "srf.csv").exists():
            out["srf"] = _sha256(data / "srf.csv")
        return out
    elif command in ("fuse", "inspect"):
        cubes, files = ["lr", "pan"], ["model"] + (["srf"] if p.get("srf") else [])
    elif command == "evaluate":
        cubes = ["pred", "ref"]
    out = {k: _cube_digest(p[k]) for k in cubes}
    out.update({k: _sha256(p[k]) for k in files})
    return out


def _write_manifest(path, command: str, params: Dict) -> None:
    _write_json(path, {"schema": SCHEMA, "command": command, "params": params,
                       "inputs": input_digests(command, params)})


def _sidecar_path(out, suffix: str) -> Path:
    """``out.csv`` -> ``out.<suffix>`` for commands whose --out is a file."""
    p = Path(out)
    return p.with_name(p.stem + suffix) if p.suffix else p.with_name(p.name + suffix)


def _read_pan(path) -> np.ndarray:
    pan = read_cube(path)
    if pan.shape[0] != 1:
        raise ConfigError(f"{path}: PAN cube must have 1 band, has {pan.shape[0]}")
    return pan[0]


def _parse_synthetic(text: str) -> List[int]:
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"--synthetic expects b,c,H,W,seed integers, got {text!r}") from None
    if len(vals) != 5:
        raise ConfigError(f"--synthetic expects 5 values b,c,H,W,seed, got {len(vals)}")
    return vals


def _known(cls, d: Dict, where: str) -> Dict:
    names = {f.name for f in fields(cls)}
    extra = sorted(set(d) - names)
    if extra:
        raise ConfigError(f"unknown {where} keys: {', '.join(extra)}")
    return d


# -- commands --------------------------------------------------------------

def run_simulate(p: Dict) -> Dict:
    out = Path(p["out"])
    abundance = None
    if p.get("synthetic"):
        b, c, h, w, seed = _parse_synthetic(p["synthetic"])
        scene = synthetic_scene(b, c, h, w, seed, p["smoothness"], p["sharpness"])
        hr, wl, abundance = scene.cube, scene.wavelengths, scene.abundance
    elif p.get("input"):
        hr, meta = read_cube(p["input"], with_meta=True)
        wl = meta.get("wavelengths")
    else:
        raise ConfigError("simulate needs --input or --synthetic")
    if p["srf"] == "uniform":
        srf = deg.uniform_srf(hr.shape[0], wl)
        srf_wl = wl if wl is not None else np.arange(hr.shape[0], dtype=np.float64)
    else:
        srf_wl, srf = deg.read_srf_csv(p["srf"])
        if srf.size != hr.shape[0]:
            raise ConfigError(f"SRF has {srf.size} weights but the cube has {hr.shape[0]} bands")
    cfg = deg.DegradationConfig(ratio=p["ratio"], kernel_size=p["kernel_size"], sigma=p["sigma"],
                                noise_std=p["noise_std"], seed=p["seed"])
    lr, pan = deg.simulate(hr, srf, cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_cube(hr, out / "hr", wl)
    write_cube(lr, out / "lr", wl)
    write_cube(pan[None], out / "pan")
    deg.write_srf_csv(out / "srf.csv", srf_wl, srf)
    if abundance is not None:
        write_cube(abundance.astype(np.float32), out / "abundance")
    _write_manifest(out / "manifest.json", "simulate", p)
    log.info("simulate: HR %s -> LR %s, PAN %s", hr.shape, lr.shape, pan.shape)
    return {"hr": list(hr.shape), "lr": list(lr.shape), "pan": list(pan.shape)}


def run_fish(p: Dict) -> Dict:
    c, bands = p["endmembers"], p["bands"]
    if c < 2:
        raise ConfigError(f"fish needs at least 2 endmembers, got {c}")
    wl = synthetic_wavelengths(bands)
    e = synthetic_endmembers(bands, c, p["seed"], wl)
    s = deg.uniform_srf(bands, wl)
    scatter = fish_scatter(e, s, p["pixels"], p["seed"])
    oracle = float(effective_srf(s, e).mean())
    summary = fish_summary(scatter, head_oracle=oracle)
    out = Path(p["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    scatter.to_csv(out)
    _write_json(_sidecar_path(out, ".summary.json"), summary)
    _write_manifest(_sidecar_path(out, ".manifest.json"), "fish", p)
    return summary


def _load_data_dir(data: Path):
    hr = read_cube(data / "hr")
    lr, lr_meta = read_cube(data / "lr", with_meta=True)
    pan = _read_pan(data / "pan")
    srf = None
    if (data / "srf.csv").exists():
        srf = deg.read_srf_csv(data / "srf.csv")[1]
    return hr, lr, pan, srf, lr_meta.get("wavelengths")


def resolve_train_config(raw: Dict) -> Dict:
    """Fill defaults and validate a train config dict (model / training / patching)."""
    raw = dict(raw or {})
    extra = sorted(set(raw) - {"model", "training", "hr_patch", "train_fraction"})
    if extra:
        raise ConfigError(f"unknown train config keys: {', '.join(extra)}")
    model = _known(PgnetConfig, dict(raw.get("model", {})), "model")
    training = asdict(TrainConfig(**_known(TrainConfig, dict(raw.get("training", {})), "training")))
    return {"model": model, "training": training,
            "hr_patch": int(raw.get("hr_patch", DEFAULT_HR_PATCH)),
            "train_fraction": float(raw.get("train_fraction", DEFAULT_TRAIN_FRACTION))}


def run_train(p: Dict) -> Dict:
    data, out = Path(p["data"]), Path(p["out"])
    cfg = resolve_train_config(p["config"])
    hr, lr, pan, srf, wl = _load_data_dir(data)
    ratio = hr.shape[1] // lr.shape[1]
    if lr.shape[1] * ratio != hr.shape[1] or lr.shape[2] * ratio != hr.shape[2]:
        raise ConfigError(f"HR {hr.shape} is not an integer multiple of LR {lr.shape}")
    model_kw = dict(cfg["model"])
    for key, val in (("bands", hr.shape[0]), ("ratio", ratio)):
        if model_kw.setdefault(key, val) != val:
            raise ConfigError(f"model.{key}={model_kw[key]} does not match the data ({val})")
    model = Pgnet(PgnetConfig(**model_kw))
    hp = cfg["hr_patch"]
    patches = deg.patchify(hr, pan, lr, hp, ratio)
    rows = deg.patch_grid(hr.shape[1], hr.shape[2], hp)[0]
    train_set, test_set = deg.split_rows(patches, rows, cfg["train_fraction"])
    if not train_set:
        raise ConfigError("the split leaves no training patches")
    meta = {"srf": None if srf is None else [float(v) for v in srf],
            "wavelengths": wl, "data_inputs": input_digests("train", p)}
    tlog = train(model, train_set, TrainConfig(**cfg["training"]), out_dir=out, meta=meta)
    best, _ = load_checkpoint(out / "best.ckpt")
    summary = {"train_patches": len(train_set), "test_patches": len(test_set),
               "steps": tlog.steps, "final_loss": tlog.rows[-1]["loss"]}
    if test_set:
        rep = evaluate(best, test_set, ratio)
        rep.to_csv(out / "test_metrics.csv")
        summary["pgnet"] = rep.mean
        summary["bicubic"] = evaluate(lambda low, _: bicubic_baseline(low, ratio), test_set, ratio).mean
        summary["sfim"] = evaluate(lambda low, pn: sfim(bicubic_baseline(low, ratio), pn), test_set, ratio).mean
        print(MetricsReport.format_row(rep.mean))
    _write_json(out / "summary.json", summary)
    _write_manifest(out / "manifest.json", "train", p)
    return summary


def _fuse_full(model: Pgnet, lr: np.ndarray, pan: np.ndarray, taps: bool = False):
    model.eval()
    with no_grad():
        return model(Tensor(lr[None].astype(np.float32)), Tensor(pan[None, None].astype(np.float32)), taps=taps)


def run_fuse(p: Dict) -> Dict:
    model, _ = load_checkpoint(p["model"])
    lr, meta = read_cube(p["lr"], with_meta=True)
    pan = _read_pan(p["pan"])
    hr = _fuse_full(model, lr, pan).data[0]
    write_cube(hr, p["out"], meta.get("wavelengths"))
    _write_manifest(_sidecar_path(p["out"], ".manifest.json"), "fuse", p)
    return {"shape": list(hr.shape)}


def run_evaluate(p: Dict) -> Dict:
    pred, ref = read_cube(p["pred"]), read_cube(p["ref"])
    if pred.shape != ref.shape:
        raise ConfigError(f"pred {pred.shape} and ref {ref.shape} differ")
    rep = MetricsReport()
    rep.add(Path(p["pred"]).name, all_metrics(pred, ref, p["ratio"]))
    Path(p["out"]).parent.mkdir(parents=True, exist_ok=True)
    rep.to_csv(p["out"], include_mean=False)
    print(MetricsReport.format_row(rep.mean))
    _write_manifest(_sidecar_path(p["out"], ".manifest.json"), "evaluate", p)
    return rep.mean


def run_inspect(p: Dict) -> Dict:
    model, meta = load_checkpoint(p["model"])
    lr = read_cube(p["lr"])
    pan = _read_pan(p["pan"])
    if p.get("srf"):
        srf = deg.read_srf_csv(p["srf"])[1]
    elif meta.get("srf") is not None:
        srf = np.asarray(meta["srf"], dtype=np.float64)
    else:
        raise ConfigError("no SRF in the checkpoint; pass --srf")
    if srf.size != model.cfg.bands:
        raise ConfigError(f"SRF has {srf.size} weights, model has {model.cfg.bands} bands")
    _, taps = _fuse_full(model, lr, pan, taps=True)
    out = Path(p["out"])
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    with no_grad():
        for name in TAPS:
            abun = taps[name].data[0]
            cube = model.decode(taps[name]).data[0]
            c = abun.shape[0]
            astd = abundance_std(abun.reshape(c, -1).astype(np.float64))
            intensity = deg.synthesize_pan(cube.astype(np.float64), srf).reshape(-1)
            scatter = FishScatter(astd, intensity)
            scatter.to_csv(out / f"scatter_{name}.csv")
            write_quicklook(cube, default_bands(cube.shape[0]), out / f"quicklook_{name}.ppm")
            summary[name] = fish_summary(scatter)
    _write_json(out / "summary.json", summary)
    _write_manifest(out / "manifest.json", "inspect", p)
    return summary


COMMANDS: Dict[str, Callable[[Dict], Dict]] = {
    "simulate": run_simulate, "fish": run_fish, "train": run_train, "fuse": run_fuse,
    "evaluate": run_evaluate, "inspect": run_inspect,
}


def replay(manifest, out: Optional[str] = None) -> Dict:
    """Rerun a command from its manifest, optionally redirecting --out.

    Inputs are re-hashed first; a changed input file is an I/O error.
    """
    try:
        m = json.loads(Path(manifest).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest}: malformed manifest ({exc})") from exc
    if m.get("schema") != SCHEMA or m.get("command") not in COMMANDS:
        raise FormatError(f"{manifest}: unsupported manifest (schema {m.get('schema')!r}, "
                          f"command {m.get('command')!r})")
    params = dict(m["params"])
    if input_digests(m["command"], params) != m.get("inputs", {}):
        raise FormatError(f"{manifest}: input files changed since the manifest was written")
    if out is not None:
        params["out"] = out
    return COMMANDS[m["command"]](params)


# -- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pgnet", description="PAN-guided hyperspectral fusion toolkit")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="degrade a reference cube into LR + PAN inputs")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="reference cube basename")
    src.add_argument("--synthetic", help="b,c,H,W,seed for a synthetic mixing scene")
    s.add_argument("--smoothness", type=float, default=SCENE_SMOOTHNESS,
                   help="synthetic abundance correlation length (pixels)")
    s.add_argument("--sharpness", type=float, default=SCENE_SHARPNESS,
                   help="synthetic abundance logit scale; larger means purer pixels")
    s.add_argument("--ratio", type=int, default=16)
    s.add_argument("--kernel-size", type=int, default=deg.DEFAULT_KERNEL_SIZE)
    s.add_argument("--sigma", type=float, default=deg.DEFAULT_SIGMA)
    s.add_argument("--noise-std", type=float, default=deg.DEFAULT_NOISE_STD)
    s.add_argument("--srf", default="uniform", help="'uniform' or a wavelength_um,weight CSV")
    s.add_argument("--seed", type=int, default=0, help="noise seed")
    s.add_argument("--out", required=True)

    f = sub.add_parser("fish", help="sample the ASTD / PAN-intensity scatter of random mixtures")
    f.add_argument("--endmembers", type=int, default=DEFAULT_ENDMEMBERS)
    f.add_argument("--pixels", type=int, default=DEFAULT_PIXELS)
    f.add_argument("--bands", type=int, default=128)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True, help="scatter CSV path")

    t = sub.add_parser("train", help="train on a simulate output directory")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="JSON with optional model / training / hr_patch / train_fraction")
    t.add_argument("--out", required=True)

    u = sub.add_parser("fuse", help="fuse an LR cube with a PAN image")
    u.add_argument("--model", required=True)
    u.add_argument("--lr", required=True)
    u.add_argument("--pan", required=True)
    u.add_argument("--out", required=True, help="output cube basename")

    e = sub.add_parser("evaluate", help="score a fused cube against its reference")
    e.add_argument("--pred", required=True)
    e.add_argument("--ref", required=True)
    e.add_argument("--ratio", type=float, default=16)
    e.add_argument("--out", required=True, help="metrics CSV path")

    i = sub.add_parser("inspect", help="scatter + quicklook of the three tapped network points")
    i.add_argument("--model", required=True)
    i.add_argument("--lr", required=True)
    i.add_argument("--pan", required=True)
    i.add_argument("--srf", help="SRF CSV, when the checkpoint carries none")
    i.add_argument("--out", required=True)

    r = sub.add_parser("replay", help="rerun a command from its manifest")
    r.add_argument("manifest")
    r.add_argument("--out", help="write outputs here instead of the recorded location")
    return ap


def _params(args: argparse.Namespace) -> Dict:
    p = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    if args.command == "train":
        if p["config"]:
            try:
                raw = json.loads(Path(p["config"]).read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{p['config']}: malformed JSON ({exc})") from exc
        else:
            raw = {}
        p["config"] = resolve_train_config(raw)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            replay(args.manifest, args.out)
        else:
            COMMANDS[args.command](_params(args))
    except (FormatError, OSError) as exc:
        print(f"pgnet: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, FloatingPointError) as exc:
        print(f"pgnet: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, IndexError) as exc:
        print(f"pgnet: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
