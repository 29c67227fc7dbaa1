#!/usr/bin/env python
"""Script for estimating perturbation effects from a CSV dataset and for
running coverage experiments on simulated data.

Usage
-----

.. highlight:: console

Once the **CoPert** package is installed, you should have access to the
:mod:`~CoPert.run_copert` script::

    $ copert -h

    copert [-h] [--version] [-v] {estimate,simulate} ...

Estimate the knock-out effect of the first coordinate with the partially
linear model::

    $ copert estimate --input data.csv --response y --composition-prefix z \
        --effect cke:1 --method plm

Screen every coordinate with the multiplicative feature influence and adjust
for two covariates::

    $ copert estimate --input data.csv --response y --composition-prefix z \
        --effect cfi_mult:all --method plm --adjust x1,x2 --bonferroni

Coverage of three estimators in the continuous partially linear setting::

    $ copert simulate --setting cont_plm --n 1000 --d 3 15 --reps 100 \
        --methods plm,npm,plugin --output coverage.csv

Exit codes: 0 on success, 2 on invalid input (unreadable file, unknown
column, effect, method or setting) and 3 when an estimator fails.

"""
import argparse
import logging
import sys
import traceback

import pandas as pd

from CoPert import __version__
from CoPert.dataset import Dataset, split_names
from CoPert.default_config import (ALPHA, DEFAULT_D, DEFAULT_N, DEFAULT_REPS,
                                   DEFAULT_SEED, METHODS, SCORE_METHODS,
                                   SCORE_NUISANCE_MODES, SETTINGS,
                                   learner_menu)
from CoPert.estimators import EstimatorConfig, bonferroni, estimate_effect
from CoPert.exceptions import (CoPertError, EstimationError, UnknownMethod,
                               ValidationError)
from CoPert.perturbations import expand_effect_specs
from CoPert.simulation import (generate, run_coverage, sweep_settings,
                               write_sample)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_ESTIMATION = 3
RESULT_COLUMNS = ["effect", "method", "estimate", "std_error", "ci_low",
                  "ci_high", "p_value", "n_used", "n_zero_speed",
                  "n_undefined_l"]
LOG_FORMAT = "%(asctime)s %(name)-24s %(levelname)-8s %(message)s"


def setup_logging(verbose):
    """Configure the root logger on standard error.

    WARNING by default, INFO with ``-v`` and DEBUG with ``-vv``.
    """
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)


def _add_estimator_options(parser):
    parser.add_argument(
        "--folds", type=int, default=None, dest="n_folds",
        help='''Number of cross-fitting folds K. By default 2 for npm, plm
        and plugin.''')
    parser.add_argument(
        "--learner", choices=sorted(learner_menu), default="cv",
        help='''Learner of every nuisance regression. `cv` selects among the
        mean, a shallow forest and a full forest by 5-fold
        cross-validation.''')
    parser.add_argument(
        "--n-trees", type=int, default=None, dest="n_trees",
        help="Number of trees of every forest (250 if not given).")
    parser.add_argument(
        "--score-method", choices=SCORE_METHODS, default=SCORE_METHODS[0],
        dest="score_method",
        help="Univariate score estimator used by the npm estimator of tau.")
    parser.add_argument(
        "--score-nuisance", choices=SCORE_NUISANCE_MODES,
        default=SCORE_NUISANCE_MODES[0], dest="score_nuisance",
        help='''Where the mean and variance of the location-scale score are
        fitted: on a half of the fold reserved for the score (resplit) or on
        the training folds (crossfit).''')
    parser.add_argument("--alpha", type=float, default=ALPHA,
                        help="Confidence intervals have level 1 - alpha.")
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED,
                        help="Seed of every random stream.")
    parser.add_argument(
        "-o", "--output", default="-",
        help="Output CSV file, `-` for the standard output.")


def setup_argparser(argv=None):
    """Setup the argument parser for the command-line script.

    Returns
    -------
    args : argparse.Namespace
        Simple class used by default by ``parse_args()`` to create an object
        holding attributes and return it.

    """
    parser = argparse.ArgumentParser(
        prog="copert",
        description='''\
Estimate average perturbation effects of compositional covariates with
confidence intervals, or check the coverage of those intervals on simulated
data.
''',
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    # ===============
    # General options
    # ===============
    parser.add_argument("--version", action="version",
                        version="%(prog)s {}".format(__version__))
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="Log progress (-v) or debugging details (-vv).")
    subparsers = parser.add_subparsers(dest="command", required=True)
    # ========
    # estimate
    # ========
    est = subparsers.add_parser(
        "estimate", help="Estimate effects from a CSV dataset.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    est.add_argument("-i", "--input", required=True,
                     help="CSV file with a header row.")
    est.add_argument("--response", required=True,
                     help="Name of the response column.")
    group = est.add_mutually_exclusive_group(required=True)
    group.add_argument("--composition",
                       help="Comma-separated names of the composition "
                            "columns.")
    group.add_argument("--composition-prefix", dest="composition_prefix",
                       help="Prefix shared by the composition columns.")
    est.add_argument(
        "--effect", action="append", required=True,
        help='''Effect to estimate, e.g. `cke:1`, `cfi_mult:all`, `cdi_gini`
        or `cai_mult:A=1,2;B=3`. Repeat the option for several effects.''')
    est.add_argument("--method", choices=METHODS, default="plm",
                     help="Estimator.")
    est.add_argument("--adjust", default=None,
                     help="Comma-separated names of adjustment covariates, "
                          "appended to w.")
    est.add_argument("--bonferroni", action="store_true",
                     help="Add Bonferroni-adjusted p-values over the "
                          "estimated effects.")
    _add_estimator_options(est)
    # ========
    # simulate
    # ========
    sim = subparsers.add_parser(
        "simulate", help="Run a coverage experiment on simulated data.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sim.add_argument(
        "--setting", required=True,
        help="Comma-separated settings among: {}.".format(", ".join(SETTINGS)))
    sim.add_argument("--n", type=int, default=DEFAULT_N, help="Sample size.")
    sim.add_argument("--d", type=int, nargs="+", default=[DEFAULT_D],
                     dest="dims",
                     help="Dimensions of the composition (toy settings always "
                          "use 3).")
    sim.add_argument("--reps", type=int, default=DEFAULT_REPS,
                     help="Number of replications.")
    sim.add_argument("--methods", default="plm,npm",
                     help="Comma-separated estimators.")
    sim.add_argument(
        "--write-data", default=None, dest="write_data",
        help="Write the dataset of the first replication to this CSV file.")
    _add_estimator_options(sim)
    return parser.parse_args(argv)


def _config_from_args(args):
    learner = args.learner
    return EstimatorConfig(
        n_folds=args.n_folds, outcome_learner=learner,
        treatment_learner=learner, variance_learner=learner,
        score_method=args.score_method, score_nuisance=args.score_nuisance,
        seed=args.seed, alpha=args.alpha, n_trees=args.n_trees)


def _write_frame(frame, output):
    if output == "-":
        frame.to_csv(sys.stdout, index=False, float_format="%.17g")
    else:
        frame.to_csv(output, index=False, float_format="%.17g")
        logger.info("Results written to {}".format(output))


def run_estimate(args):
    """Run the ``estimate`` command and return the exit code.

    Invalid arguments, datasets and effect specs raise before any estimation.
    An effect that fails afterwards is logged and left out of the output, and
    the exit code becomes 3.
    """
    dataset = Dataset.from_csv(args.input, args.response, args.composition,
                               args.composition_prefix, args.adjust)
    specs = expand_effect_specs(args.effect, dataset.d)
    config = _config_from_args(args)
    rows = []
    retcode = EXIT_OK
    for spec in specs:
        name = spec.to_text()
        logger.info("Estimating {} with {}".format(name, args.method))
        try:
            result = estimate_effect(spec, dataset.y, dataset.Z, args.method,
                                     config, dataset.X)
        except CoPertError as e:
            # The other effects are still estimated and written
            logger.error("{}: {}: {}".format(name, type(e).__name__, e))
            retcode = EXIT_ESTIMATION
            continue
        for msg in result.warnings:
            logger.warning("{}: {}".format(name, msg))
        row = {"effect": name}
        row.update(result.to_row())
        rows.append(row)
    frame = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    if args.bonferroni:
        frame["p_bonferroni"] = bonferroni(frame["p_value"].to_numpy())
    _write_frame(frame, args.output)
    return retcode


def run_simulate(args):
    """Run the ``simulate`` command and return the exit code."""
    names = split_names(args.setting)
    methods = split_names(args.methods)
    for method in methods:
        if method not in METHODS:
            raise UnknownMethod("Unknown method '{}': choose from {}".format(
                method, ", ".join(METHODS)))
    settings = sweep_settings(names, args.n, args.dims, args.seed)
    if args.write_data:
        sample, _ = generate(settings[0].with_seed(args.seed))
        write_sample(args.write_data, sample)
        logger.info("Dataset of {} written to {}".format(settings[0].name,
                                                         args.write_data))
    config = None
    defaults = (args.n_folds is None and args.learner == "cv"
                and args.n_trees is None and args.alpha == ALPHA
                and args.score_method == SCORE_METHODS[0]
                and args.score_nuisance == SCORE_NUISANCE_MODES[0])
    if not defaults:
        # Toy settings keep their own defaults only without overrides
        config = _config_from_args(args)
    report = run_coverage(settings, methods, args.reps, args.seed, config)
    _write_frame(report.to_frame(), args.output)
    return EXIT_OK


def main(argv=None):
    """Main entry-point to the script.

    Returns
    -------
    retcode : int
        0 on success, 2 on invalid input and 3 if an estimator failed.

    """
    args = setup_argparser(argv)
    setup_logging(args.verbose)
    try:
        if args.command == "estimate":
            return run_estimate(args)
        return run_simulate(args)
    except ValidationError as e:
        sys.stderr.write("copert: error: {}\n".format(e))
        return EXIT_INVALID
    except EstimationError as e:
        sys.stderr.write("copert: error: {}: {}\n".format(type(e).__name__, e))
        return EXIT_ESTIMATION
    except ValueError as e:
        sys.stderr.write("copert: error: {}\n".format(e))
        if args.verbose > 1:
            traceback.print_exc()
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
