"""Command-line entry point.

Subcommands: decompose (print the sub-prompt plan), generate (run the full
staged pipeline and write the output tree), nurse-check (validate the
analytic gradient against finite differences), eval-scb (score images
against the style-composition corpus), dump-attn (re-run a finished
generation and write attention maps as PGM).

Exit codes: 0 success, 1 usage error, 2 prompt grammar error, 3
numeric/config error. Diagnostics go to stderr as one line.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .denoiser import init_params
from .errors import PromptParseError, StagediffError
from .formats import (
    read_manifest,
    read_ppm,
    write_latent,
    write_loss_csv,
    write_manifest,
    write_pgm,
    write_ppm,
)
from .numerics import SeededStream, seeded_gaussian, token_embedding
from .nurse import NurseConfig, analytic_gradient, fd_gradient, total_loss_at
from .orchestrator import PipelineConfig, run
from .prompts import plan_from_text, tokenize
from .scb import build_benchmark, component_scores, parse_boxes, SCBPrompt

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_NUMERIC = 3

_CONFIG_NAMES = {"A": "A", "B": "B", "C": "C", "D": "D", "accum": "accumulative"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _build_parser():
    parser = _Parser(prog="stagediff")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="print the staged sub-prompt plan")
    p.add_argument("--prompt", required=True)
    p.add_argument("--config", choices=sorted(_CONFIG_NAMES), default="B")

    p = sub.add_parser("generate", help="run the staged pipeline")
    p.add_argument("--prompt")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--share-frac", type=float, default=0.8)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--nurse-steps", type=int, default=1)
    p.add_argument(
        "--nurse-branch", choices=("attribute", "first"), default="attribute"
    )
    p.add_argument("--mask-source", choices=("branch", "first"), default="branch")
    p.add_argument("--config", choices=sorted(_CONFIG_NAMES), default="B")
    p.add_argument("--parallel", action="store_true")
    p.add_argument("--trace", action="store_true")
    p.add_argument("--manifest", help="rerun from a stored manifest")
    p.add_argument("--out", required=True)

    p = sub.add_parser("nurse-check", help="finite-difference gradient check")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval-scb", help="score images on the style corpus")
    p.add_argument("--images", required=True)
    p.add_argument("--boxes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prompts", help="corpus file overriding the seeded one")

    p = sub.add_parser("dump-attn", help="write attention maps from a run")
    p.add_argument("--run", required=True)
    p.add_argument("--branch", type=int, required=True)
    p.add_argument("--step", type=int, required=True)
    return parser


def _default_seed(seed):
    if seed is not None:
        return seed
    env = os.environ.get("DPP_SEED")
    return int(env) if env else 0


def _cmd_decompose(args):
    plan = plan_from_text(args.prompt, _CONFIG_NAMES[args.config])
    for k, (label, text) in enumerate(zip(plan.labels, plan.sub_prompts)):
        subj_idx = k - plan.base_index - 1
        subject = (
            plan.subjects[subj_idx]
            if 0 <= subj_idx < len(plan.subjects)
            else "-"
        )
        sys.stdout.write(f"{label}\t{text}\t{subject}\n")
    return EXIT_OK


def _manifest_from_args(args):
    return {
        "prompt": args.prompt,
        "config": _CONFIG_NAMES[args.config],
        "seed": _default_seed(args.seed),
        "steps": args.steps,
        "share_fraction": args.share_frac,
        "tau": args.tau,
        "lambda": args.lam,
        "alpha": args.alpha,
        "nurse_steps": args.nurse_steps,
        "nurse_branch": args.nurse_branch,
        "mask_source": args.mask_source,
        "parallel": bool(args.parallel),
        "trace": bool(args.trace),
        "model": {
            "seed": 0,
            "h": 16,
            "w": 16,
            "c": 3,
            "d": 32,
            "dk": 16,
            "n_layers": 1,
        },
        "backend": "numba" if kernels.using_numba() else "numpy",
        "versions": {"stagediff": __version__, "latent_format": "DPP1"},
    }


def _config_from_manifest(man):
    model = man["model"]
    nurse = NurseConfig(
        lam=man["lambda"], alpha=man["alpha"], steps=man["nurse_steps"]
    )
    return PipelineConfig(
        steps=man["steps"],
        share_fraction=man["share_fraction"],
        tau=man["tau"],
        mask_source=man["mask_source"],
        nurse=nurse,
        nurse_branch=man["nurse_branch"],
        parallel=man["parallel"],
        model_seed=model["seed"],
        h=model["h"],
        w=model["w"],
        c=model["c"],
        d=model["d"],
        dk=model["dk"],
        n_layers=model["n_layers"],
    )


def _run_from_manifest(man, trace=False, attn_hook=None):
    kernels.use_numba(man.get("backend") == "numba")
    plan = plan_from_text(man["prompt"], man["config"])
    cfg = _config_from_manifest(man)
    result = run(plan, cfg, man["seed"], trace=trace, attn_hook=attn_hook)
    return plan, result


def _cmd_generate(args):
    if args.manifest:
        man = read_manifest(args.manifest)
    else:
        if not args.prompt:
            sys.stderr.write("error: --prompt or --manifest is required\n")
            return EXIT_USAGE
        man = _manifest_from_args(args)
    plan, result = _run_from_manifest(man, trace=man.get("trace", False))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.json", man)
    for i, (label, grid) in enumerate(zip(result.labels, result.latents)):
        write_latent(out / f"b{i}_final.dpl", grid)
    write_ppm(out / "image.ppm", result.output)
    write_loss_csv(out / "losses.csv", result.loss_rows)
    if result.trace is not None:
        trace_dir = out / "trace"
        trace_dir.mkdir(exist_ok=True)
        for (i, t), grid in sorted(result.trace.items()):
            write_latent(trace_dir / f"b{i}_t{t}.dpl", grid)
    return EXIT_OK


def _cmd_nurse_check(args):
    params = init_params(7, h=8, w=8, c=3, d=16, dk=8, n_layers=1)
    tokens = tokenize("a red dog and a blue cat")
    emb = np.stack([token_embedding(tok, params.d) for tok in tokens])
    spans = [(2, 3), (6, 7)]
    z = seeded_gaussian(SeededStream(args.seed), 8 * 8 * 3).reshape(8, 8, 3)
    t = 25
    lam = 1.0
    grad = analytic_gradient(params, z, emb, spans, t, lam)
    rng = np.random.default_rng(args.seed)
    coords = rng.choice(z.size, 20, replace=False)
    fd = fd_gradient(
        lambda zz: total_loss_at(params, zz, emb, spans, t, lam),
        z,
        1e-4,
        coords,
    )
    ga = grad.reshape(-1)[coords]
    fa = fd.reshape(-1)[coords]
    rel = np.abs(ga - fa) / np.maximum(1e-8, np.abs(ga) + np.abs(fa))
    err = float(rel.max())
    sys.stdout.write(f"max relative error: {err:.3e}\n")
    return EXIT_OK if err <= 1e-4 else EXIT_NUMERIC


def _parse_scb_prompt(text):
    toks = tokenize(text)
    # a STYLE style SUBJECT in a STYLE style BACKGROUND
    try:
        i_in = toks.index("in")
        assert toks[0] == "a" and toks[2] == "style"
        assert toks[i_in + 1] == "a" and toks[i_in + 3] == "style"
        subject = " ".join(toks[3:i_in])
        background = " ".join(toks[i_in + 4 :])
        assert subject and background
    except (ValueError, AssertionError, IndexError):
        raise PromptParseError(f"not an SCB-form prompt: {text!r}")
    return SCBPrompt(toks[1], subject, toks[i_in + 2], background)


def _cmd_eval_scb(args):
    if args.prompts:
        with open(args.prompts, "r", encoding="utf-8") as fh:
            corpus = [
                _parse_scb_prompt(line) for line in fh if line.strip()
            ]
    else:
        corpus = build_benchmark(args.seed)
    with open(args.boxes, "r", encoding="utf-8") as fh:
        box_table = parse_boxes(fh)
    shared = box_table.get(None, {})

    images = sorted(Path(args.images).glob("*.ppm"))
    if not images:
        sys.stderr.write(f"error: no .ppm images in {args.images}\n")
        return EXIT_USAGE
    lines = []
    for path in images:
        idx = int(path.stem)
        if idx >= len(corpus):
            sys.stderr.write(f"error: image index {idx} outside the corpus\n")
            return EXIT_USAGE
        prompt = corpus[idx]
        boxes = dict(shared)
        boxes.update(box_table.get(idx, {}))
        image = read_ppm(path)
        present = []
        for component, score in component_scores(image, prompt, boxes):
            if score is None:
                lines.append(f"{idx},{component},MISSING")
            else:
                lines.append(f"{idx},{component},{score!r}")
                present.append(score)
        if present:
            lines.append(f"{idx},AVG,{float(np.mean(present))!r}")
        else:
            lines.append(f"{idx},AVG,MISSING")
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return EXIT_OK


def _cmd_dump_attn(args):
    run_dir = Path(args.run)
    man = read_manifest(run_dir / "manifest.json")
    wanted = {}

    def hook(t, branch, captured):
        if t == args.step and branch == args.branch:
            wanted["captured"] = captured

    _plan, _result = _run_from_manifest(man, attn_hook=hook)
    captured = wanted.get("captured")
    if captured is None:
        sys.stderr.write(
            f"error: no attention captured for branch {args.branch} "
            f"step {args.step}\n"
        )
        return EXIT_USAGE
    for li, (s_map, c_map) in enumerate(
        zip(captured.self_maps, captured.cross_maps)
    ):
        write_pgm(
            run_dir / f"attn_b{args.branch}_t{args.step}_self_l{li}.pgm", s_map
        )
        write_pgm(
            run_dir / f"attn_b{args.branch}_t{args.step}_cross_l{li}.pgm", c_map
        )
    return EXIT_OK


_COMMANDS = {
    "decompose": _cmd_decompose,
    "generate": _cmd_generate,
    "nurse-check": _cmd_nurse_check,
    "eval-scb": _cmd_eval_scb,
    "dump-attn": _cmd_dump_attn,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except PromptParseError as exc:
        sys.stderr.write(f"parse error: {exc}\n")
        return EXIT_PARSE
    except (StagediffError, ValueError, IndexError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
