"""
Command Line Interface
======================

Subcommands:
    preprocess  SMILES file -> dataset.npz, vocab.json, certificates.txt
    train       one stage on a dataset -> checkpoint + step log
    generate    stage checkpoints -> SMILES file ('!' marks invalid molecules)
    eval        generated SMILES vs training certificates -> metrics
    verify      equivariance / decomposition / equiprobability checks
    baseline    random attributes on data skeletons -> metrics floor

Exit codes: 0 success, 2 validation or verification failure, 3 I/O or parse abort.
"""

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent))

import argparse
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from chem_io import SmilesError, parse_smiles, read_smiles_file, write_smiles
from config import ConfigError, StageConfig, dump_config, load_config
from dataset import (DatasetError, GraphBatch, MoleculeDataset, load_certificates, preprocess_smiles,
                     save_certificates, save_vocab)
from gan_stages import (CheckpointError, DivergedLoss, GenerationPipeline, ModelParams, StageError,
                        StageId, build_model, load_checkpoint, stage1_generator, train_stage)
from graph_core import GraphError, MolecularGraph
from metrics import MetricsError, baseline_random, evaluate
from validation_engine import ValidationEngine
from validators.vocab_extractor import VocabExtractor
from verify import (SIGNIFICANCE, VerifyError, check_decomposition_invariance, check_equivariance,
                    equiprobability_test, fixed_output_generator, positional_id_generator,
                    recurrent_row_function, sum_row_function)


EXIT_OK = 0
EXIT_FAILED = 2
EXIT_ABORT = 3

MAX_SKIP_FRACTION = 0.5
INVALID_MARKER = "!"

BUILTIN_MODELS = ("random-stage1", "random-stage2", "random-stage3", "positional-id", "recurrent",
                  "fixed-output")
SUITES = ("equivariance", "decomposition", "equiprobability")


class AbortCommand(Exception):
    """Stops a subcommand with EXIT_ABORT"""


def _print_settings(title: str, settings: Dict[str, object], config: Optional[StageConfig] = None) -> None:
    print("=" * 70)
    print(f"🔄 {title}")
    print("=" * 70)
    for key, value in settings.items():
        print(f"{key} = {value}")
    if config is not None:
        print(dump_config(config), end="")
    print()


def _config_from_args(args) -> StageConfig:
    overrides = {"seed": args.seed} if getattr(args, "seed", None) is not None else {}
    if getattr(args, "steps", None) is not None:
        overrides["max_steps"] = args.steps
    return load_config(getattr(args, "config", None), **overrides)


def _load_dataset(path: Path) -> MoleculeDataset:
    if not Path(path).exists():
        raise AbortCommand(f"Dataset not found: {path}")
    return MoleculeDataset.load(path)


# preprocess

def cmd_preprocess(args) -> int:
    _print_settings("Preprocess", {"input": args.input, "out_dir": args.out_dir,
                                   "max_atoms": args.max_atoms, "qm9": args.qm9})
    if not Path(args.input).exists():
        raise AbortCommand(f"Input file not found: {args.input}")

    dataset, report = preprocess_smiles(read_smiles_file(args.input), max_atoms=args.max_atoms)
    for line_no, text, reason in report.skipped_lines:
        print(f"⚠️  line {line_no}: {text} skipped ({reason})")
    print(f"\n📊 {report.summary()}")

    if report.skip_fraction > MAX_SKIP_FRACTION:
        raise AbortCommand(f"{report.skip_fraction:.0%} of lines skipped (limit {MAX_SKIP_FRACTION:.0%})")
    if len(dataset) == 0:
        raise AbortCommand("No molecule survived preprocessing")

    extractor = VocabExtractor(dataset.graphs)
    for problem in extractor.validate_rules():
        print(f"⚠️  {problem}")
    print(f"📊 Vocabulary: {len(dataset.vocab)} atom types ({', '.join(d.label for d in dataset.vocab)})")
    if args.qm9:
        warning = extractor.check_type_count()
        if warning:
            print(f"⚠️  {warning}")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset.save(out_dir / "dataset.npz")
    save_vocab(dataset.vocab, out_dir / "vocab.json")
    save_certificates(dataset.certificates(), out_dir / "certificates.txt")
    print(f"\n💾 Dataset saved to: {out_dir}")
    return EXIT_OK


# train

def cmd_train(args) -> int:
    config = _config_from_args(args)
    stage = StageId.parse(args.stage)
    _print_settings(f"Train stage {stage.value} ({stage.name.lower()})",
                    {"dataset": args.dataset, "checkpoint": args.checkpoint, "log": args.log}, config)
    dataset = _load_dataset(args.dataset)
    print(f"📊 {dataset.get_stats()}")

    log_path = args.log or Path(args.checkpoint).with_suffix(".log")
    try:
        result = train_stage(stage, dataset, config, log_path=log_path, verbose=not args.quiet,
                             checkpoint_path=args.checkpoint)
    except DivergedLoss as e:
        print(f"❌ {e}")
        return EXIT_FAILED
    last = result.log.records[-1]
    print(f"\n✅ {result.steps} steps, final d_loss={last.d_loss:.4f} g_loss={last.g_loss:.4f} "
          f"wasserstein={last.wasserstein_estimate:.4f}")
    print(f"💾 Checkpoint saved to: {args.checkpoint}")
    print(f"💾 Log saved to: {log_path}")
    return EXIT_OK


# generate

def _load_stage(path: Optional[Path], stage: StageId) -> Optional[ModelParams]:
    if path is None:
        return None
    model, _, _ = load_checkpoint(path)
    if model.stage != stage:
        raise AbortCommand(f"{path} holds stage {model.stage.value}, expected stage {stage.value}")
    return model


def format_generated(graph: MolecularGraph, engine: ValidationEngine) -> str:
    """SMILES line for a generated molecule; invalid ones get the leading marker"""
    if engine.is_valid(graph):
        return write_smiles(graph, engine.table)
    try:
        return INVALID_MARKER + write_smiles(graph, engine.table, allow_fragments=True)
    except (SmilesError, GraphError):
        return INVALID_MARKER


def cmd_generate(args) -> int:
    stage2_model, config, vocab = load_checkpoint(args.stage2)
    if stage2_model.stage != StageId.NODE_ATTRS:
        raise AbortCommand(f"{args.stage2} is not a stage 2 checkpoint")
    stage3_model = _load_stage(args.stage3, StageId.EDGE_ATTRS)
    stage1_model = _load_stage(args.stage1, StageId.SKELETON)
    config = config.replace(seed=args.seed, sample_outputs=args.sample)
    source = "stage1" if args.stage1 else "data"
    _print_settings("Generate", {"count": args.count, "source": source, "dataset": args.dataset,
                                 "out": args.out}, config)

    dataset = _load_dataset(args.dataset)
    if dataset.vocab != vocab:
        raise AbortCommand("Dataset vocabulary differs from the checkpoint vocabulary")
    rng = np.random.default_rng(args.seed)
    pipeline = GenerationPipeline(vocab, stage2_model, stage3_model, stage1_model, config, verbose=True)
    graphs = pipeline.generate(args.count, rng, source, dataset.skeletons(),
                               [g.n for g in dataset.graphs])

    engine = ValidationEngine()
    lines = [format_generated(g, engine) for g in graphs]
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    invalid = sum(line.startswith(INVALID_MARKER) for line in lines)
    print(f"\n📊 {len(lines)} molecules, {invalid} marked invalid")
    print(f"💾 Generated molecules saved to: {args.out}")
    return EXIT_OK


# eval

def read_generated(path: Path) -> List[Optional[MolecularGraph]]:
    """One entry per line; marked or unparseable lines become None"""
    out: List[Optional[MolecularGraph]] = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            text = line.strip()
            if not text:
                continue
            if text.startswith(INVALID_MARKER):
                out.append(None)
                continue
            try:
                out.append(parse_smiles(text))
            except SmilesError:
                out.append(None)
    return out


def cmd_eval(args) -> int:
    _print_settings("Evaluate", {"generated": args.generated, "certificates": args.certificates,
                                 "out": args.out})
    for path in (args.generated, args.certificates):
        if not Path(path).exists():
            raise AbortCommand(f"File not found: {path}")
    report = evaluate(read_generated(args.generated), load_certificates(args.certificates))
    print(report.render_table())
    if report.empty_valid_set:
        print("⚠️  No valid molecules: uniq and nov are undefined")
    if args.out:
        Path(args.out).write_text(report.render_kv() + "\n", encoding="utf-8")
        print(f"\n💾 Metrics saved to: {args.out}")
    return EXIT_OK


# verify

def _random_skeleton(n: int, rng: np.random.Generator) -> np.ndarray:
    upper = np.triu(rng.random((n, n)) < 0.5, k=1)
    return (upper | upper.T).astype(np.float64)


def _random_one_hot(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    return np.eye(k)[rng.integers(k, size=n)]


def _equivariance_cases(model: ModelParams, n: int, rng: np.random.Generator) -> List[tuple]:
    """(name, f, inputs, input_axes, output_axes) for a stage's generator and critic"""
    Z = rng.standard_normal((n, model.latent_dim))
    A = _random_skeleton(n, rng)
    X = _random_one_hot(n, model.vocab_size, rng)
    W = np.zeros((n, n, 4))
    W[..., 0] = A
    gen, critic = model.generator, model.critic

    def critic_score(varying, A_, X_=None):
        batch = GraphBatch(A_[None], (X_ if X_ is not None else X)[None], W[None])
        return critic.score(varying[None], batch).values[0]

    if model.stage == StageId.SKELETON:
        return [("generator", lambda Z_: gen.probabilities(Z_), (Z,), (1,), 2),
                ("critic", lambda A_: critic_score(A_, A_), (A,), (2,), 0)]
    if model.stage == StageId.NODE_ATTRS:
        return [("generator", lambda Z_, A_: gen.probabilities(Z_, A_), (Z, A), (1, 2), 1),
                ("critic", lambda X_, A_: critic_score(X_, A_), (X, A), (1, 2), 0)]
    return [("generator", lambda Z_, X_, A_: gen.probabilities(Z_, X_, A_), (Z, X, A), (1, 1, 2), 2),
            ("critic", lambda W_, X_, A_: critic_score(W_, A_, X_), (W, X, A), (2, 1, 2), 0)]


def _verify_model(args, config: StageConfig) -> Optional[ModelParams]:
    if args.checkpoint:
        model, _, _ = load_checkpoint(args.checkpoint)
        return model
    if args.model.startswith("random-stage"):
        stage = StageId.parse(args.model[-1])
        return build_model(stage, config, config.atom_types, np.random.default_rng(config.seed))
    return None


def _run_equivariance(args, config, model, rng) -> bool:
    if model is not None:
        cases = _equivariance_cases(model, args.n, rng)
    elif args.model == "positional-id":
        Z = rng.standard_normal((args.n, config.latent_dim))
        cases = [("positional-id", positional_id_generator(config.latent_dim, args.n, rng), (Z,), (1,), 1)]
    else:
        raise AbortCommand(f"Model {args.model!r} does not support the equivariance suite")
    ok = True
    for name, f, inputs, input_axes, output_axes in cases:
        report = check_equivariance(f, inputs, args.trials, rng, input_axes, output_axes)
        print(f"[{name}]")
        print(report.render())
        print(f"{'✅' if report.passed(args.tolerance) else '❌'} {name}\n")
        ok = ok and report.passed(args.tolerance)
    return ok


def _run_decomposition(args, config, model, rng) -> bool:
    if model is not None and model.stage == StageId.SKELETON:
        f_row: Callable = sum_row_function(model.generator.trunk[0])
        d_z = model.latent_dim
    elif args.model == "recurrent":
        f_row, d_z = recurrent_row_function(config.latent_dim, rng), config.latent_dim
    else:
        raise AbortCommand("The decomposition suite needs a stage 1 model or the recurrent builtin")
    report = check_decomposition_invariance(f_row, rng.standard_normal((args.n, d_z)), args.trials, rng)
    print(report.render())
    return report.passed(args.tolerance)


def _run_equiprobability(args, config, model, rng) -> bool:
    if model is not None and model.stage == StageId.SKELETON:
        generator = lambda Z: stage1_generator(Z, model.generator).sample
        latent_dim = model.latent_dim
    elif args.model == "fixed-output":
        path = np.eye(args.n, k=1) + np.eye(args.n, k=-1)
        generator, latent_dim = fixed_output_generator(path), config.latent_dim
    else:
        raise AbortCommand("The equiprobability suite needs a stage 1 model or the fixed-output builtin")
    batched = model is not None
    report = equiprobability_test(generator, args.n, args.samples, rng, latent_dim, batched=batched)
    print(report.render())
    return report.passed(SIGNIFICANCE)


def cmd_verify(args) -> int:
    config = _config_from_args(args)
    _print_settings(f"Verify ({args.suite})", {"model": args.checkpoint or args.model, "n": args.n,
                                               "trials": args.trials, "samples": args.samples}, config)
    rng = np.random.default_rng(config.seed)
    model = _verify_model(args, config)
    runner = {"equivariance": _run_equivariance, "decomposition": _run_decomposition,
              "equiprobability": _run_equiprobability}[args.suite]
    ok = runner(args, config, model, rng)
    print(f"\n{'✅ PASSED' if ok else '❌ FAILED'}: {args.suite}")
    return EXIT_OK if ok else EXIT_FAILED


# baseline

def cmd_baseline(args) -> int:
    _print_settings("Random baseline", {"dataset": args.dataset, "certificates": args.certificates,
                                        "samples": args.samples, "seed": args.seed})
    dataset = _load_dataset(args.dataset)
    certificates = load_certificates(args.certificates) if args.certificates else dataset.certificates()
    rng = np.random.default_rng(args.seed)
    report = baseline_random(dataset.skeletons(), dataset.vocab, rng, args.samples, certificates)
    print(report.render_table())
    return EXIT_OK


# Parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="equivariant-mol-gan",
                                     description="Three-stage permutation-equivariant molecular graph GAN")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="SMILES file to dataset, vocabulary and certificates")
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--max-atoms", type=int, default=9)
    p.add_argument("--qm9", action="store_true", help="warn unless the vocabulary has 21 atom types")
    p.set_defaults(handler=cmd_preprocess)

    p = sub.add_parser("train", help="train one stage")
    p.add_argument("--stage", required=True, choices=["1", "2", "3"])
    p.add_argument("--dataset", required=True, type=Path)
    p.add_argument("--config", type=Path)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--log", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, help="override max_steps")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("generate", help="sample molecules from trained stages")
    p.add_argument("--stage2", required=True, type=Path)
    p.add_argument("--stage3", required=True, type=Path)
    p.add_argument("--stage1", type=Path, help="draw skeletons from this stage 1 checkpoint")
    p.add_argument("--dataset", required=True, type=Path, help="skeletons and node counts")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample", action="store_true", help="sample outputs instead of argmax")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("eval", help="validity, uniqueness and novelty")
    p.add_argument("--generated", required=True, type=Path)
    p.add_argument("--certificates", required=True, type=Path)
    p.add_argument("--out", type=Path)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("verify", help="structural checks")
    p.add_argument("--suite", required=True, choices=SUITES)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--checkpoint", type=Path)
    group.add_argument("--model", choices=BUILTIN_MODELS, default="random-stage1")
    p.add_argument("--config", type=Path)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("baseline", help="random attributes on data skeletons")
    p.add_argument("--dataset", required=True, type=Path)
    p.add_argument("--certificates", type=Path)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_baseline)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except AbortCommand as e:
        print(f"❌ {e}")
    except (OSError, ConfigError, DatasetError, CheckpointError, SmilesError) as e:
        print(f"❌ {type(e).__name__}: {e}")
    except (StageError, MetricsError, VerifyError, GraphError) as e:
        print(f"❌ {type(e).__name__}: {e}")
        return EXIT_FAILED
    return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
