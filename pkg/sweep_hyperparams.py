#!/usr/bin/env python3
"""Train one model per hyperparameter setting and compare them"""

from pyapputil.argutil import ArgumentParser
from pyapputil.typeutil import ValidateAndDefault, OptionalValueType, StrType, ItemList, PositiveIntegerType, PositiveNonZeroIntegerType
from pyapputil.logutil import GetLogger, logargs
from pyapputil.exceptutil import InvalidArgumentError

from dataset import read_pairs
from embedding import COMPONENTS, TrainingConfig, evaluate_pairs, train
from train_model import format_log_value, load_corpus
from util import MetadataFile, add_global_args, run_command, write_csv

SWEEP_HEADER = ("parameter", "value", "val_loss", "test_auc")

def sweep_settings(base, embed_sizes, depths, epoch_list, components):
    """
    Vary one setting at a time around the base config

    Returns:
        A list of (parameter name, value, TrainingConfig)
    """
    settings = []
    for name, values in (("embed_size", embed_sizes), ("depth", depths), ("epochs", epoch_list), ("component", components)):
        for value in values or []:
            settings.append((name, value, TrainingConfig(**{**base, name: value})))
    return settings

@logargs
@ValidateAndDefault({
    # "arg_name" : (arg_type, arg_default)
    "train_pairs" : (StrType(), None),
    "val_pairs" : (StrType(), None),
    "test_pairs" : (StrType(), None),
    "corpus" : (ItemList(StrType()), None),
    "out_file" : (StrType(), None),
    "embed_sizes" : (OptionalValueType(ItemList(PositiveNonZeroIntegerType())), None),
    "depths" : (OptionalValueType(ItemList(PositiveIntegerType())), None),
    "epoch_list" : (OptionalValueType(ItemList(PositiveIntegerType())), None),
    "components" : (OptionalValueType(ItemList(StrType())), None),
    "epochs" : (PositiveIntegerType(), 50),
    "lr" : (float, 0.001),
    "batch" : (PositiveNonZeroIntegerType(), 100),
    "embed_size" : (PositiveNonZeroIntegerType(), 64),
    "depth" : (PositiveIntegerType(), 1),
    "seed" : (int, 0),
})
def sweep(train_pairs,
          val_pairs,
          test_pairs,
          corpus,
          out_file,
          embed_sizes,
          depths,
          epoch_list,
          components,
          epochs,
          lr,
          batch,
          embed_size,
          depth,
          seed):
    """
    Train a model for each swept value, holding the other settings at their
    base values, and write the best validation loss and the test AUC of each

    Args:
        train_pairs:    (str) Training pairs file
        val_pairs:      (str) Validation pairs file
        test_pairs:     (str) Test pairs file
        corpus:         (list of str) Manifests holding every SSG the pairs name
        out_file:       (str) Results CSV to write
        embed_sizes:    (list of int) Embedding sizes to try
        depths:         (list of int) Message passing depths to try
        epoch_list:     (list of int) Epoch counts to try
        components:     (list of str) Graph components to try, "ssg" and/or "scfg"
        epochs:         (int) Base epoch count
        lr:             (float) Adam learning rate
        batch:          (int) Pairs per mini-batch
        embed_size:     (int) Base embedding size
        depth:          (int) Base message passing depth
        seed:           (int) Seed shared by every run
    """
    localargs = locals()
    log = GetLogger()

    for component in components or []:
        if component not in COMPONENTS:
            raise InvalidArgumentError(f"component must be one of {', '.join(COMPONENTS)}")
    base = {"learning_rate": lr, "batch_pairs": batch, "epochs": epochs, "embed_size": embed_size,
            "depth": depth, "seed": seed, "component": "ssg"}
    settings = sweep_settings(base, embed_sizes, depths, epoch_list, components)
    if not settings:
        raise InvalidArgumentError("Nothing to sweep, give at least one of embed_sizes, depths, epoch_list, components")

    training = read_pairs(train_pairs)
    validation = read_pairs(val_pairs)
    test = read_pairs(test_pairs)
    graphs = load_corpus(corpus)
    rows = []
    for name, value, config in settings:
        log.info(f"Training with {name} = {value}")
        result = train(training, graphs, config, validation)
        val_loss, _ = evaluate_pairs(result.model, validation, graphs)
        _, test_auc = evaluate_pairs(result.model, test, graphs)
        log.info(f"{name} = {value}: val loss {format_log_value(val_loss)}, test AUC {format_log_value(test_auc)}")
        rows.append((name, value, format_log_value(val_loss), format_log_value(test_auc)))

    write_csv(out_file, SWEEP_HEADER, rows)
    metadata = MetadataFile(out_file)
    metadata.add("args", localargs)
    metadata.write()

    log.passed(f"Successfully swept {len(rows)} settings into {out_file}")
    return True


if __name__ == '__main__':
    parser = ArgumentParser(description="Train one model per hyperparameter setting and compare them")
    parser.add_argument("--train-pairs", required=True, type=StrType(), metavar="FILENAME", help="Training pairs file")
    parser.add_argument("--val-pairs", required=True, type=StrType(), metavar="FILENAME", help="Validation pairs file")
    parser.add_argument("--test-pairs", required=True, type=StrType(), metavar="FILENAME", help="Test pairs file")
    parser.add_argument("-c", "--corpus", required=True, type=StrType(), action="append", metavar="FILENAME", help="Corpus manifest, may be given more than once")
    parser.add_argument("-o", "--out", required=True, type=StrType(), dest="out_file", metavar="FILENAME", help="Results CSV to write")
    parser.add_argument("--embed-sizes", type=PositiveNonZeroIntegerType(), action="append", metavar="SIZE", help="Embedding size to try, may be given more than once")
    parser.add_argument("--depths", type=PositiveIntegerType(), action="append", metavar="ROUNDS", help="Message passing depth to try, may be given more than once")
    parser.add_argument("--epoch-list", type=PositiveIntegerType(), action="append", metavar="COUNT", help="Epoch count to try, may be given more than once")
    parser.add_argument("--components", type=StrType(), action="append", choices=COMPONENTS, help="Graph component to try, may be given more than once")
    parser.add_argument("--epochs", type=PositiveIntegerType(), default=50, metavar="COUNT", help="Base epoch count")
    parser.add_argument("--lr", type=float, default=0.001, metavar="RATE", help="Adam learning rate")
    parser.add_argument("--batch", type=PositiveNonZeroIntegerType(), default=100, metavar="PAIRS", help="Pairs per mini-batch")
    parser.add_argument("--embed-size", type=PositiveNonZeroIntegerType(), default=64, metavar="SIZE", help="Base embedding size")
    parser.add_argument("--depth", type=PositiveIntegerType(), default=1, metavar="ROUNDS", help="Base message passing depth")
    add_global_args(parser)
    args = parser.parse_args_to_dict()

    run_command(sweep, args)
