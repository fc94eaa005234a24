#
#   LiDAR odometry from matched keypoints on spherical depth images
#
#   Command-line entry point
import os
import sys
import logging
import argparse

from src.core.exceptions import DataError, EstimationError
from src.core.pipeline.config import load_pipeline_config
from src.core.pipeline.odometry_pipeline import run_eval, run_mkps, run_odometry, run_plot, run_project, \
    run_synth, run_train

ROOT_DIR = os.path.dirname(os.path.abspath(__file__))
DEFAULT_CONFIG = os.path.join(ROOT_DIR, "configs", "default_pipeline.ini")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ESTIMATION = 3

logger = logging.getLogger("lidar_odometry")


class ArgumentParser(argparse.ArgumentParser):
    """ Usage errors exit with 1, code 2 is reserved for data errors """

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, "{}: error: {}\n".format(self.prog, message))


def init_arg_parser():

    common = argparse.ArgumentParser(add_help=False)

    common.add_argument(
        "--config",
        type=str,
        default=None,
        help="Pipeline config (INI). Defaults to configs/default_pipeline.ini when it exists.")

    common.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Seed for scene synthesis, RANSAC sampling and training.")

    common.add_argument(
        "--estimator",
        choices=["closed_form_ransac", "icp_baseline", "neural"],
        default=None,
        help="Frame-to-frame motion estimator.")

    common.add_argument(
        "--strict",
        action="store_true",
        default=None,
        help="Abort on the first failing frame instead of using an identity motion.")

    common.add_argument(
        "--out",
        type=str,
        default=None,
        help="Output directory.")

    common.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default="INFO",
        help="Logging level.")

    parser = ArgumentParser(prog="lidar_odometry.py")
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.required = True

    synth = subparsers.add_parser("synth", parents=[common],
                                  help="Write a synthetic scan sequence and its ground truth.")
    synth.add_argument("--scene", type=str, default=None, help="Scene spec (INI).")
    synth.add_argument("--frames", type=int, default=None, help="Number of scans.")

    project = subparsers.add_parser("project", parents=[common], help="Export debug images of one scan.")
    project.add_argument("scan", type=str, help="KITTI .bin scan.")

    mkps = subparsers.add_parser("mkps", parents=[common], help="Write the MKPs of two scans as CSV.")
    mkps.add_argument("scan_a", type=str)
    mkps.add_argument("scan_b", type=str)

    odometry = subparsers.add_parser("odometry", parents=[common], help="Estimate the trajectory of a scan directory.")
    odometry.add_argument("--scans", type=str, default=None, help="Directory of NNNNNN.bin scans.")
    odometry.add_argument("--gt", type=str, default=None, help="Ground-truth pose file, enables metrics.")
    odometry.add_argument("--checkpoint", type=str, default=None, help="Checkpoint of the neural estimator.")

    train = subparsers.add_parser("train", parents=[common], help="Train the neural estimator.")
    train.add_argument("--scans", type=str, default=None)
    train.add_argument("--gt", type=str, default=None)
    train.add_argument("--scene", type=str, default=None, help="Scene spec used when no scans are given.")
    train.add_argument("--frames", type=int, default=None)

    evaluate = subparsers.add_parser("eval", parents=[common], help="KITTI metrics of a pose file.")
    evaluate.add_argument("est", type=str, help="Estimated pose file.")
    evaluate.add_argument("gt", type=str, help="Ground-truth pose file.")

    plot = subparsers.add_parser("plot", parents=[common], help="Trajectory overlay of pose files.")
    plot.add_argument("poses", type=str, nargs="+")

    return parser


def build_config(args):
    """ Config file first, command-line flags win """

    overrides = {'run': {}, 'paths': {}}
    if args.seed is not None:
        overrides['run']['seed'] = args.seed
    if args.estimator is not None:
        overrides['run']['estimator'] = args.estimator
    if args.strict:
        overrides['run']['strict'] = True
    if args.out is not None:
        overrides['paths']['out_dir'] = args.out
    if getattr(args, 'frames', None) is not None:
        overrides['run']['n_frames'] = args.frames
    for flag, key in (('scans', 'scans_dir'), ('gt', 'gt_poses'), ('scene', 'scene'), ('checkpoint', 'checkpoint')):
        if args.command != 'eval' and getattr(args, flag, None) is not None:
            overrides['paths'][key] = getattr(args, flag)

    config_path = args.config
    if config_path is None and os.path.isfile(DEFAULT_CONFIG):
        config_path = DEFAULT_CONFIG
    return load_pipeline_config(config_path, overrides)


def run_command(args, config):
    if args.command == "synth":
        run_synth(config)
    elif args.command == "project":
        run_project(config, args.scan)
    elif args.command == "mkps":
        run_mkps(config, args.scan_a, args.scan_b)
    elif args.command == "odometry":
        run_odometry(config)
    elif args.command == "train":
        run_train(config)
    elif args.command == "eval":
        report = run_eval(args.est, args.gt, out_dir=args.out)
        print(report.table())
    elif args.command == "plot":
        run_plot(config, args.poses)


def main(argv=None):
    args = init_arg_parser().parse_args(argv)

    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)

    try:
        config = build_config(args)
        run_command(args, config)
    except DataError as e:
        logger.error("data error: %s", e)
        return EXIT_DATA
    except EstimationError as e:
        logger.error("estimation failed: %s", e)
        return EXIT_ESTIMATION
    except (ValueError, FileNotFoundError) as e:
        logger.error("%s", e)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
