"""Command-line entry point: train, eval, audit, sweep, ablate, noise-debug, synth, self-check."""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, TypeVar

import numpy as np
import pandas as pd
from pydantic import ValidationError

from src import config
from src.errors import ConfigurationError, DclrError, ShapeError
from src.models.embeddings import EmbeddingMatrix, PairDataset
from src.schemas.config import (
    ABLATION_VARIANTS,
    AuditConfig,
    EvalConfig,
    SelfCheckConfig,
    SynthConfig,
    TrainConfig,
)
from src.services.diagnostics import (
    HIGH_SIMILARITY,
    apply_whitening,
    audit_negatives,
    compute_whitening,
    evaluate_representations,
    pair_cosines,
    uniformity_loss,
)
from src.services.embedding_io import (
    checkpoint_paths,
    infer_format,
    load_checkpoint,
    load_embeddings,
    load_pair_dataset,
    save_checkpoint,
    save_embeddings,
    save_pair_dataset,
)
from src.services.head import encode, forward_views
from src.services.noise import init_noise, optimize_noise
from src.services.progress import write_tsv
from src.services.selfcheck import run_self_check
from src.services.sweep import SWEEP_PARAMS, SweepService
from src.services.synth import generate_synthetic
from src.services.trainer import INIT_STREAM, STEP_STREAM, init_head, run_training, stream_rng
from src.services.weighting import ComplementaryScorer

logger = logging.getLogger(__name__)

T = TypeVar("T")

EXIT_OK = 0
EXIT_FAILED_CHECK = 1
EXIT_INVALID = 2


def parse_phi(value: str) -> float:
    if value.strip().lower() == "off":
        return config.PHI_OFF
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"phi must be a number or 'off', got {value!r}") from None


def parse_list(cast: Callable[[str], object]) -> Callable[[str], list]:
    def parse(value: str) -> list:
        try:
            return [cast(v) for v in value.split(",") if v.strip()]
        except (ValueError, argparse.ArgumentTypeError) as e:
            raise argparse.ArgumentTypeError(str(e)) from None
    return parse


def add_input_arguments(parser: argparse.ArgumentParser, dev: bool = True) -> None:
    parser.add_argument("--embeddings", required=True, help="corpus embeddings (EMB1 binary or TSV)")
    parser.add_argument("--format", choices=["binary", "tsv"], help="embedding format (default: from suffix)")
    parser.add_argument("--ids", action="store_true", help="TSV rows start with a sentence id")
    if dev:
        parser.add_argument("--dev", action="append", required=True, help="dev pair file (repeatable)")


def add_train_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--reference-embeddings", help="complementary model embeddings, row-aligned with --embeddings")
    parser.add_argument("--tau", type=float, default=0.05)
    parser.add_argument("--tau-u", type=float, default=0.05)
    parser.add_argument("--sigma", type=float, default=1.0)
    parser.add_argument("--beta", type=float, default=1e-3)
    parser.add_argument("--t-steps", "--t", dest="t_steps", type=int, default=4)
    parser.add_argument("--k", type=float, default=1.0)
    parser.add_argument("--phi", type=parse_phi, default=0.9, help="weighting threshold, or 'off'")
    parser.add_argument("--dropout", type=float, default=0.1)
    parser.add_argument("--hidden-dim", type=int)
    parser.add_argument("--out-dim", type=int)
    parser.add_argument("--activation", choices=["tanh", "identity"], default="tanh")
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--epochs", type=int, default=3)
    parser.add_argument("--eval-every", type=int, default=150)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--data-fraction", type=float, default=1.0)
    parser.add_argument("--no-noise", action="store_true")
    parser.add_argument("--no-noise-update", action="store_true")
    parser.add_argument("--weighting", choices=["reference", "self", "off"],
                        help="default: reference when --reference-embeddings is given, else self")
    parser.add_argument("--literal-eq6", action="store_true",
                        help="leave the positive term out of the loss denominator")
    parser.add_argument("--single-view-negatives", action="store_true")


def resolve_seed(seed: int) -> int:
    try:
        override = config.seed_override()
    except ValueError:
        raise ConfigurationError("DCLR_SEED must be an integer") from None
    return seed if override is None else override


def train_config(args: argparse.Namespace) -> TrainConfig:
    """
    TrainConfig from the flags; pydantic validation runs before any file is read
    """
    weighting = args.weighting
    if weighting is None:
        weighting = "reference" if args.reference_embeddings else "self"
    if weighting == "reference" and not args.reference_embeddings:
        raise ConfigurationError("--weighting reference needs --reference-embeddings")
    return TrainConfig(
        tau=args.tau,
        literal_eq6=args.literal_eq6,
        single_view_negatives=args.single_view_negatives,
        tau_u=args.tau_u,
        sigma=args.sigma,
        beta=args.beta,
        t_steps=args.t_steps,
        k=args.k,
        no_noise=args.no_noise,
        no_noise_update=args.no_noise_update,
        phi=args.phi,
        weighting=weighting,
        dropout=args.dropout,
        hidden_dim=args.hidden_dim,
        out_dim=args.out_dim,
        activation=args.activation,
        lr=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        eval_every=args.eval_every,
        seed=resolve_seed(args.seed),
        data_fraction=args.data_fraction,
    )


def check_flags(model: Callable[..., T], **values) -> T:
    """Validate a command's own flags, before any file is read."""
    try:
        return model(**values)
    except ValidationError as e:
        problems = "; ".join(f"--{str(err['loc'][0]).replace('_', '-')}: {err['msg']}" for err in e.errors())
        raise ConfigurationError(problems) from None


def sweep_values(param: str, raw: Sequence[str]) -> List[float]:
    """Grid values for --param; only phi accepts 'off'"""
    cast = parse_phi if param == "phi" else float
    values = []
    for value in raw:
        try:
            values.append(cast(value))
        except (ValueError, argparse.ArgumentTypeError):
            raise ConfigurationError(f"--values for {param} must be numbers, got {value!r}") from None
    return values


def require_files(*paths: Optional[str]) -> None:
    for path in paths:
        if path is not None and not Path(path).is_file():
            raise ConfigurationError(f"input file not found: {path}")


def output_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DclrError(f"Error creating {out}: {e}") from e
    return out


def read_corpus(args: argparse.Namespace, path: Optional[str] = None) -> EmbeddingMatrix:
    path = path or args.embeddings
    return load_embeddings(path, args.format or infer_format(path), has_ids=args.ids)


def read_devs(paths: Sequence[str], corpus: EmbeddingMatrix) -> List[PairDataset]:
    devs = []
    for path in paths:
        dev = load_pair_dataset(path, corpus)
        if len(dev) == 0:
            raise ConfigurationError(f"dev pair file {path} holds no pairs")
        devs.append(dev)
    return devs


def read_scorer(args: argparse.Namespace, corpus: EmbeddingMatrix, cfg: TrainConfig) -> Optional[ComplementaryScorer]:
    if not args.reference_embeddings:
        return None
    reference = read_corpus(args, args.reference_embeddings)
    if reference.n != corpus.n:
        raise ShapeError(f"reference embeddings hold {reference.n} rows, corpus {corpus.n}")
    return ComplementaryScorer.from_reference(reference, cfg.phi, working_dim=cfg.out_dim or corpus.d)


def cmd_self_check(args: argparse.Namespace) -> int:
    flags = check_flags(SelfCheckConfig, scale=args.scale)
    report = run_self_check(seed=resolve_seed(args.seed), scale=flags.scale)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_FAILED_CHECK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = train_config(args)
    check_scale = check_flags(SelfCheckConfig, scale=args.self_check_scale).scale
    require_files(args.embeddings, args.reference_embeddings, args.resume, *args.dev)
    out = output_dir(args.out)

    if args.self_check:
        report = run_self_check(seed=cfg.seed, scale=check_scale)
        if not report.passed:
            for line in report.lines():
                print(line, file=sys.stderr)
            print("self-check failed; refusing to train", file=sys.stderr)
            return EXIT_FAILED_CHECK

    corpus = read_corpus(args)
    devs = read_devs(args.dev, corpus)
    scorer = read_scorer(args, corpus, cfg)
    resume = load_checkpoint(args.resume) if args.resume else None

    result = run_training(corpus, devs, cfg, scorer=scorer, resume=resume)
    save_checkpoint(result.best, out / "best")
    result.progress.write_metrics(out / "metrics.tsv")
    write_tsv(result.progress.uniformity_frame(), out / "uniformity_dev.tsv")

    print(f"best dev spearman\t{result.best.dev_metric:.6f}\tstep {result.best.step}")
    print(f"final dev spearman\t{result.final.dev_metric:.6f}\tstep {result.final.step}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    flags = check_flags(EvalConfig, whiten=args.whiten, whiten_dim=args.whiten_dim)
    require_files(args.embeddings, *args.dev)
    require_files(*_checkpoint_files(args.checkpoint))
    ckpt = load_checkpoint(args.checkpoint)
    corpus = read_corpus(args)
    if ckpt.params.d_in != corpus.d:
        raise ShapeError(f"checkpoint expects d={ckpt.params.d_in}, embeddings have d={corpus.d}")
    devs = read_devs(args.dev, corpus)

    reps = encode(ckpt.params, corpus.as_float64())
    raw = corpus.as_float64()
    if flags.whiten:
        kernel, bias = compute_whitening(raw, flags.whiten_dim)
        whitened = apply_whitening(raw, kernel, bias)

    scores, dumps = [], []
    for dev in devs:
        rho = evaluate_representations(reps, dev)
        scores.append(rho)
        line = f"{dev.name}\t{rho:.6f}"
        if flags.whiten:
            line += f"\twhitened baseline {evaluate_representations(whitened, dev):.6f}"
        print(line)
        if args.predictions:
            dumps.append(pd.DataFrame({
                "dev": dev.name,
                "index_a": dev.index_a,
                "index_b": dev.index_b,
                "gold": dev.scores,
                "prediction": pair_cosines(reps, dev.index_a, dev.index_b),
            }))
    print(f"mean\t{np.mean(scores):.6f}")
    if args.predictions:
        write_tsv(pd.concat(dumps, ignore_index=True), args.predictions)
    return EXIT_OK


def _checkpoint_files(path: str) -> List[str]:
    return [str(p) for p in checkpoint_paths(path)]


def cmd_audit(args: argparse.Namespace) -> int:
    flags = check_flags(
        AuditConfig,
        batch_size=args.batch_size,
        num_batches=args.num_batches,
        bins=args.bins,
        threshold=args.threshold,
        whiten=args.whiten,
    )
    require_files(args.embeddings)
    if args.checkpoint:
        require_files(*_checkpoint_files(args.checkpoint))
    corpus = read_corpus(args)
    reps = corpus.as_float64()
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        if ckpt.params.d_in != corpus.d:
            raise ShapeError(f"checkpoint expects d={ckpt.params.d_in}, embeddings have d={corpus.d}")
        reps = encode(ckpt.params, reps)

    rng = np.random.default_rng(resolve_seed(args.seed))
    histogram = audit_negatives(
        reps, rng, batch_size=flags.batch_size, num_batches=flags.num_batches,
        bins=flags.bins, threshold=flags.threshold,
    )
    uniformity = uniformity_loss(reps, rng=np.random.default_rng(resolve_seed(args.seed)))
    write_tsv(histogram.to_frame(), args.out)

    print(f"negatives\t{histogram.total}")
    print(f"fraction >= {flags.threshold:g}\t{histogram.high_fraction:.6f}")
    print(f"mean negative cosine\t{histogram.mean_similarity:.6f}")
    print(f"uniformity\t{uniformity:.6f}")
    if flags.whiten and corpus.n > corpus.d:
        kernel, bias = compute_whitening(reps)
        whitened = apply_whitening(reps, kernel, bias)
        print(f"uniformity after whitening\t{uniformity_loss(whitened, rng=np.random.default_rng(0)):.6f}")
    return EXIT_OK


def _sweep_service(args: argparse.Namespace, cfg: TrainConfig) -> SweepService:
    corpus = read_corpus(args)
    devs = read_devs(args.dev, corpus)
    return SweepService(corpus, devs, cfg, scorer=read_scorer(args, corpus, cfg))


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = train_config(args)
    values = sweep_values(args.param, args.values)
    if not values:
        raise ConfigurationError("--values needs at least one grid value")
    for value in values:
        cfg.with_overrides(**{args.param: value})
    require_files(args.embeddings, args.reference_embeddings, *args.dev)
    out = output_dir(args.out)

    service = _sweep_service(args, cfg)
    table = service.run(args.param, values)
    write_tsv(table, out / f"sweep_{args.param}.tsv")
    write_tsv(service.curves_frame(), out / f"sweep_{args.param}_uniformity.tsv")
    print(table.to_csv(sep="\t", index=False, float_format="%.6f"), end="")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = train_config(args)
    unknown = [v for v in args.variants if v not in ABLATION_VARIANTS]
    if unknown:
        raise ConfigurationError(f"unknown variants {unknown}; expected any of {sorted(ABLATION_VARIANTS)}")
    seeds = args.seeds or [cfg.seed]
    for variant in args.variants:
        variant_cfg = cfg.for_variant(variant)
        if variant_cfg.weighting == "reference" and not args.reference_embeddings:
            raise ConfigurationError(f"variant {variant} needs --reference-embeddings")
    require_files(args.embeddings, args.reference_embeddings, *args.dev)
    out = output_dir(args.out)

    service = _sweep_service(args, cfg)
    runs = service.run_ablations(args.variants, seeds)
    means = SweepService.ablation_means(runs)
    write_tsv(runs, out / "ablation_runs.tsv")
    write_tsv(means, out / "ablation_means.tsv")
    write_tsv(service.curves_frame(), out / "ablation_uniformity.tsv")
    print(means.to_csv(sep="\t", index=False, float_format="%.6f"), end="")
    return EXIT_OK


def cmd_noise_debug(args: argparse.Namespace) -> int:
    cfg = train_config(args)
    if not cfg.uses_noise:
        raise ConfigurationError("noise-debug needs k > 0 without --no-noise")
    require_files(args.embeddings)
    out = output_dir(args.out)
    corpus = read_corpus(args)
    if corpus.n < 2:
        raise ConfigurationError("noise-debug needs at least two sentences")

    params, _ = init_head(corpus, cfg)
    rng = stream_rng(cfg.seed, STEP_STREAM, 0)
    batch = stream_rng(cfg.seed, INIT_STREAM, 1).choice(corpus.n, size=min(cfg.batch_size, corpus.n), replace=False)
    h, h_plus, _ = forward_views(params, corpus.rows(batch), rng)
    m = cfg.noise.bank_size(len(batch))
    before = init_noise(rng, m, h.shape[1], cfg.sigma)
    trace: List[float] = []
    after = optimize_noise(before, h, h_plus, cfg.noise, trace=trace)

    save_embeddings(EmbeddingMatrix(before.vectors), out / "noise_before.emb")
    save_embeddings(EmbeddingMatrix(after.vectors), out / "noise_after.emb")
    for step, loss in enumerate(trace):
        print(f"{step}\t{loss:.8f}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = SynthConfig(
        n=args.n,
        d=args.d,
        cone_angle=args.cone_angle,
        clusters=args.clusters,
        noise_level=args.noise_level,
        jitter=args.jitter,
        num_pairs=args.num_pairs,
        seed=resolve_seed(args.seed),
    )
    out = output_dir(args.out)
    matrix, reference, pairs, recipe = generate_synthetic(cfg)
    fmt = args.format
    suffix = ".tsv" if fmt == "tsv" else ".emb"
    save_embeddings(matrix, out / f"embeddings{suffix}", fmt)
    save_pair_dataset(pairs, out / "pairs.tsv")
    if args.reference_out:
        save_embeddings(reference, out / f"reference{suffix}", fmt)
    try:
        (out / "recipe.json").write_text(json.dumps(recipe, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise DclrError(f"Error writing {out / 'recipe.json'}: {e}") from e
    print(f"wrote {matrix.n}x{matrix.d} embeddings and {len(pairs)} pairs to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dclr", description="Debiased contrastive refinement of sentence embeddings")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a projection head")
    add_input_arguments(train)
    add_train_arguments(train)
    train.add_argument("--out", default="runs/dclr", help="output directory")
    train.add_argument("--resume", help="checkpoint to continue from")
    train.add_argument("--self-check", action="store_true", help="run the gradient oracles first")
    train.add_argument("--self-check-scale", type=float, default=0.2, help=argparse.SUPPRESS)
    train.set_defaults(handler=cmd_train)

    evaluate = sub.add_parser("eval", help="Spearman of a checkpoint on pair files")
    add_input_arguments(evaluate)
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--predictions", help="write per-pair predictions to this TSV")
    evaluate.add_argument("--whiten", action="store_true", help="also report the whitening baseline")
    evaluate.add_argument("--whiten-dim", type=int)
    evaluate.set_defaults(handler=cmd_eval)

    audit = sub.add_parser("audit", help="in-batch negative similarity histogram")
    add_input_arguments(audit, dev=False)
    audit.add_argument("--checkpoint", help="audit head outputs instead of raw embeddings")
    audit.add_argument("--out", required=True, help="histogram TSV")
    audit.add_argument("--batch-size", type=int, default=256)
    audit.add_argument("--num-batches", type=int, default=8)
    audit.add_argument("--bins", type=int, default=20)
    audit.add_argument("--threshold", type=float, default=HIGH_SIMILARITY)
    audit.add_argument("--whiten", action="store_true")
    audit.add_argument("--seed", type=int, default=0)
    audit.set_defaults(handler=cmd_audit)

    sweep = sub.add_parser("sweep", help="one run per value of phi, k or data fraction")
    add_input_arguments(sweep)
    add_train_arguments(sweep)
    sweep.add_argument("--param", choices=SWEEP_PARAMS, required=True)
    sweep.add_argument("--values", type=parse_list(str), required=True, help="comma-separated grid")
    sweep.add_argument("--out", default="runs/sweep")
    sweep.set_defaults(handler=cmd_sweep)

    ablate = sub.add_parser("ablate", help="train ablation variants over seeds")
    add_input_arguments(ablate)
    add_train_arguments(ablate)
    ablate.add_argument("--variants", type=parse_list(str), default=["dclr", "no_noise", "no_weighting", "random_noise"])
    ablate.add_argument("--seeds", type=parse_list(int))
    ablate.add_argument("--out", default="runs/ablate")
    ablate.set_defaults(handler=cmd_ablate)

    noise = sub.add_parser("noise-debug", help="dump a noise bank before and after ascent")
    add_input_arguments(noise, dev=False)
    add_train_arguments(noise)
    noise.add_argument("--out", default="runs/noise")
    noise.set_defaults(handler=cmd_noise_debug)

    synth = sub.add_parser("synth", help="write a synthetic anisotropic corpus and pair file")
    synth.add_argument("--out", required=True, help="output directory")
    synth.add_argument("--n", type=int, default=2000)
    synth.add_argument("--d", type=int, default=64)
    synth.add_argument("--cone-angle", "--half-angle", dest="cone_angle", type=float, default=20.0,
                       help="polar angle in degrees the bulk of the cloud is squeezed to (90: isotropic)")
    synth.add_argument("--clusters", type=int, default=20)
    synth.add_argument("--noise-level", type=float, default=1.0)
    synth.add_argument("--jitter", type=float, default=0.0)
    synth.add_argument("--num-pairs", type=int, default=1000)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--format", choices=["binary", "tsv"], default="binary")
    synth.add_argument("--reference-out", action="store_true", help="also write the latent vectors")
    synth.set_defaults(handler=cmd_synth)

    check = sub.add_parser("self-check", help="run the gradient and oracle suites")
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--scale", type=float, default=1.0, help="fraction of the default case counts")
    check.set_defaults(handler=cmd_self_check)
    return parser


def configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else getattr(logging, config.LOG_LEVEL, logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.handler(args)
    except ValidationError as e:
        errors = "; ".join(f"{'.'.join(map(str, err['loc'])) or 'config'}: {err['msg']}" for err in e.errors())
        print(f"dclr {args.command}: invalid configuration: {errors}", file=sys.stderr)
    except DclrError as e:
        print(f"dclr {args.command}: {e}", file=sys.stderr)
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
