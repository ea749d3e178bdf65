"""Command-line entry point; one subcommand per workflow step.

Exit codes: 0 success, 2 config error, 3 data error, 4 non-finite training loss.
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .errors import ConfigError, DataError, SGSMError
from .mixer import MaskConfig
from .pipeline import (PipelineConfig, SGSMInstance, SyntheticTaskSpec, synth_dataset,
                       train_compressors, train_mixer_stage, transform_dataset)
from .selection import SelectionResult
from .signal_methods import load_external_codes
from .tensorio import read_tensor, write_tensor

log = logging.getLogger("sgsm")


def _load_config(path, seed):
    if path is None:
        raise ConfigError("--config is required")
    return PipelineConfig.load(path, seed=seed)


def _externals(config, specs):
    lengths = {m.name: m.output_length for m in config.methods if m.kind == "External"}
    out = {}
    for item in specs:
        name, _, path = item.partition("=")
        if name not in lengths or not path:
            raise ConfigError(f"--external expects NAME=PATH for a registered External channel, got {item!r}")
        out[name] = np.stack(load_external_codes(path, lengths[name]))
    return out


def _dir(config, key, override):
    d = Path(override or config.paths[key])
    d.mkdir(parents=True, exist_ok=True)
    return d


common = [
    click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True,
                 help="JSON pipeline config (schema 1)."),
    click.option("--seed", type=int, default=None, help="Override the config's root seed."),
]


def with_common(fn):
    for opt in reversed(common):
        fn = opt(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", count=True)
def cli(verbose):
    """Pre-train method-bank autoencoders, embed labeled data, and select method subsets."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@with_common
@click.option("--kind", type=click.Choice(["SpectralPeak", "EnvelopeShape", "WaveletBurst"]),
              default="SpectralPeak")
@click.option("--classes", type=int, default=6)
@click.option("--per-class", type=int, default=100)
@click.option("--noise", type=float, default=0.3)
@click.option("--unlabeled", type=int, default=2000)
@click.option("--out", type=click.Path(file_okay=False), default=None)
def synth(config_path, seed, kind, classes, per_class, noise, unlabeled, out):
    """Write a synthetic unlabeled pool and labeled task as SGTF files."""
    config = _load_config(config_path, seed)
    spec = SyntheticTaskSpec(kind, classes, per_class, noise, config.seed, config.input_length,
                             unlabeled)
    ds = synth_dataset(spec)
    d = _dir(config, "data", out)
    write_tensor(d / "unlabeled.sgtf", ds.unlabeled)
    write_tensor(d / "labeled.sgtf", ds.labeled)
    write_tensor(d / "labels.sgtf", ds.labels)
    click.echo(f"wrote {ds.unlabeled.shape[0]} unlabeled and {ds.labeled.shape[0]} labeled samples to {d}")


@cli.command()
@with_common
@click.option("--input", "input_path", type=click.Path(dir_okay=False), default=None,
              help="SGTF dataset; defaults to <data>/unlabeled.sgtf.")
@click.option("--external", multiple=True, help="NAME=PATH of precomputed vectors for an External channel.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
def transform(config_path, seed, input_path, external, out):
    """Apply every registered method and write transformed_<method>.sgtf."""
    config = _load_config(config_path, seed)
    X = read_tensor(input_path or Path(config.paths["data"]) / "unlabeled.sgtf")
    transformed = transform_dataset(config, X, _externals(config, external))
    d = _dir(config, "data", out)
    for mid, arr in transformed.items():
        write_tensor(d / f"transformed_{mid}.sgtf", arr)
    click.echo(f"wrote {len(transformed)} transformed datasets to {d}")


@cli.command("train-compressors")
@with_common
@click.option("--transformed", type=click.Path(file_okay=False), default=None,
              help="Directory holding transformed_<method>.sgtf; defaults to the data path.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
def train_compressors_cmd(config_path, seed, transformed, out):
    """Train one compressor per method and write the concatenated codes."""
    config = _load_config(config_path, seed)
    src = Path(transformed or config.paths["data"])
    data = {m.method_id: read_tensor(src / f"transformed_{m.method_id}.sgtf") for m in config.methods}
    comps, histories = train_compressors(config, data)
    d = _dir(config, "checkpoints", out)
    for comp in comps:
        comp.save(d / f"compressor_{comp.method_id}")
    codes = np.concatenate([c.encode(data[c.method_id]) for c in comps], axis=1)
    write_tensor(d / "codes.sgtf", codes)
    (d / "compressor_history.json").write_text(json.dumps(histories, indent=2))
    for mid, hist in histories.items():
        if hist:
            click.echo(f"{mid}: loss {hist[0]:.4f} -> {hist[-1]:.4f}")


@cli.command("train-mixer")
@with_common
@click.option("--codes", type=click.Path(dir_okay=False), default=None,
              help="Concatenated codes; defaults to <checkpoints>/codes.sgtf.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
def train_mixer_cmd(config_path, seed, codes, out):
    """Train the mixer on concatenated codes and finalise the instance."""
    config = _load_config(config_path, seed)
    d = _dir(config, "checkpoints", out)
    V = read_tensor(codes or d / "codes.sgtf")
    if V.ndim != 2 or V.shape[1] != config.n_channels * config.code_length:
        raise DataError(f"codes shape {V.shape} does not match "
                        f"{config.n_channels} channels x {config.code_length}")
    mixer, hist = train_mixer_stage(config, V)
    mixer.save(d / "mixer")
    (d / "instance.json").write_text(json.dumps(config.to_json(), indent=2))
    (d / "mixer_history.json").write_text(json.dumps(hist, indent=2))
    if hist:
        click.echo(f"mixer: loss {hist[0]:.4f} -> {hist[-1]:.4f}")


def _labeled(config, input_path, labels_path):
    data = Path(config.paths["data"])
    X = read_tensor(input_path or data / "labeled.sgtf")
    y = read_tensor(labels_path or data / "labels.sgtf").astype(np.int64)
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise DataError(f"labels {y.shape} do not match samples {X.shape}")
    return X, y


@cli.command()
@with_common
@click.option("--input", "input_path", type=click.Path(dir_okay=False), default=None)
@click.option("--labels", "labels_path", type=click.Path(dir_okay=False), default=None)
@click.option("--mask", required=True, help="T/F string, one character per channel.")
@click.option("--external", multiple=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Embedding file; defaults to <outputs>/embeddings_<mask>.sgtf.")
def embed(config_path, seed, input_path, labels_path, mask, external, out):
    """Embed a labeled dataset under one channel mask."""
    from .pipeline import embed_dataset

    config = _load_config(config_path, seed)
    mask = MaskConfig.parse(mask, config.n_channels)
    inst = SGSMInstance.load(config.paths["checkpoints"], config)
    X, y = _labeled(config, input_path, labels_path)
    data = embed_dataset(inst, X, y, mask, _externals(config, external))
    target = Path(out) if out else _dir(config, "outputs", None) / f"embeddings_{mask}.sgtf"
    target.parent.mkdir(parents=True, exist_ok=True)
    write_tensor(target, data.embeddings)
    sidecar = {"mask": str(mask), "channels": config.method_ids(), "shape": list(data.embeddings.shape),
               "class_count": data.class_count}
    target.with_name(target.name + ".json").write_text(json.dumps(sidecar, indent=2))
    click.echo(f"wrote embeddings {list(data.embeddings.shape)} to {target}")


@cli.command()
@with_common
@click.option("--input", "input_path", type=click.Path(dir_okay=False), default=None)
@click.option("--labels", "labels_path", type=click.Path(dir_okay=False), default=None)
@click.option("--mask", "masks", multiple=True, help="Restrict the sweep to these masks.")
@click.option("--external", multiple=True)
@click.option("--classifier", type=click.Choice(["logistic", "mlp"]), default=None)
@click.option("--metric", type=click.Choice(["accuracy", "f1_macro"]), default=None)
@click.option("--epsilon", type=float, default=None, help="Fail if the winning margin is below this.")
@click.option("--varsigma", type=float, default=None, help="Fail if the train/holdout gap exceeds this.")
@click.option("--objective", default="task")
@click.option("--out", type=click.Path(file_okay=False), default=None)
def select(config_path, seed, input_path, labels_path, masks, external, classifier, metric,
           epsilon, varsigma, objective, out):
    """Sweep channel masks and write report.json / report.txt."""
    from dataclasses import replace

    from .pipeline import run_selection
    from .selection import SelectionGateError

    config = _load_config(config_path, seed)
    clf = config.classifier
    if classifier:
        clf = replace(clf, kind=classifier)
    if metric:
        clf = replace(clf, metric=metric)
    masks = [MaskConfig.parse(m, config.n_channels) for m in masks] or None
    inst = SGSMInstance.load(config.paths["checkpoints"], config)
    X, y = _labeled(config, input_path, labels_path)
    d = _dir(config, "outputs", out)
    try:
        result = run_selection(inst, X, y, masks=masks, seed=config.seed,
                               external=_externals(config, external), out_dir=d, classifier=clf,
                               epsilon=epsilon, varsigma=varsigma, objective=objective)
    except SelectionGateError as exc:
        exc.result.write(d)
        click.echo(exc.result.table(), nl=False)
        raise
    click.echo(result.table(), nl=False)


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--input", "input_path", type=click.Path(dir_okay=False), default=None,
              help="report.json; defaults to <outputs>/report.json.")
@click.option("--format", "fmt", type=click.Choice(["table", "json"]), default="table")
def report(config_path, seed, input_path, fmt):
    """Print a saved selection report."""
    if input_path is None:
        config = _load_config(config_path, seed)
        input_path = Path(config.paths["outputs"]) / "report.json"
    path = Path(input_path)
    if not path.exists():
        raise DataError(f"missing report {path}")
    result = SelectionResult.from_json(json.loads(path.read_text()))
    if fmt == "json":
        click.echo(json.dumps(result.to_json(), indent=2))
    else:
        click.echo(result.table(), nl=False)


def main(argv=None):
    try:
        cli.main(args=argv, prog_name="sgsm", standalone_mode=False)
    except SGSMError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return 2
    except click.Abort:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
