import argparse
import csv
import logging
import os
import sys
import time
from typing import List, Optional, Sequence, Tuple

import numpy as np

from irisloc import benchmark, closure, gaze, imgcore, modelfile, providers, session, synth
from irisloc.coarse import ConfigurationError
from irisloc.config import RunConfig
from irisloc.pipeline import EyeLocator, FaceBox, face_box_from_truth
from irisloc.providers import DatasetItem
from irisloc.serializer import SerializationError
from irisloc.track import OPEN

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NO_DETECTION = 4
EXIT_NO_WORK = 5

DETECTION_FIELDS = ['filename', 'eye', 'x', 'y', 'a', 'b', 'orientation', 'gof', 'accepted', 'psr']
TRACK_FIELDS = ['frame', 'eye', 'raw_x', 'raw_y', 'accepted', 'kf_x', 'kf_y', 'state', 'corner_x', 'corner_y',
                'ecic_raw_x', 'ecic_raw_y', 'ecic_kf_x', 'ecic_kf_y']


class CommandError(Exception):
    def __init__(self, message: str, code: int):
        super(CommandError, self).__init__(message)
        self.code = code


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.replace(';', ',').split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected a comma-separated number list, got %r" % text)


def _fmt(v: Optional[float]) -> str:
    return '' if v is None else '%.6f' % v


def _writer(f):
    return csv.writer(f, lineterminator='\n')


def _out_path(args, name: str) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _image_paths(target: str) -> List[str]:
    if os.path.isdir(target):
        return [os.path.join(target, n) for n in sorted(os.listdir(target))
                if n.lower().endswith(providers.IMAGE_SUFFIXES)]
    if os.path.exists(target):
        return [target]
    raise CommandError("%s does not exist" % target, EXIT_IO)


def _synth_items(kind: str, count: int, config: RunConfig) -> List[DatasetItem]:
    items = []
    for k, spec in enumerate(synth.corpus(kind, count, config.stage_seed('synth-' + kind))):
        image, truth = synth.render_face(spec)
        items.append(DatasetItem(image_path='%s_%04d.pgm' % (kind, k), gt_left=truth.left.centre,
                                 gt_right=truth.right.centre,
                                 gt_corners=(truth.left.corners[1], truth.right.corners[0]),
                                 face_box=truth.face_box, image=image))
    return items


def _dataset(args, config: RunConfig) -> List[DatasetItem]:
    if args.dataset == 'synth':
        return _synth_items(args.kind, args.count, config)
    if args.data is None:
        raise CommandError("--data is required for the %s dataset" % args.dataset, EXIT_CONFIG)
    try:
        return providers.load_dataset(args.dataset, args.data, config.dataset.column_map)
    except (OSError, providers.ParseError) as e:
        raise CommandError(str(e), EXIT_IO)


def cmd_locate(args, config: RunConfig) -> int:
    if args.data.lower().endswith('.csv'):
        try:
            entries = [(item.image_path, item.face_box or face_box_from_truth(item.gt_left, item.gt_right,
                                                                              config.layout))
                       for item in providers.load_custom(args.data)]
        except (OSError, providers.ParseError) as e:
            raise CommandError(str(e), EXIT_IO)
    else:
        entries = [(path, args.face) for path in _image_paths(args.data)]
    if not entries:
        log.warning("nothing to locate in %s", args.data)
        return EXIT_NO_WORK
    locator = EyeLocator(config)
    failures = accepted = 0
    elapsed = 0.0
    with open(_out_path(args, 'detections.csv'), 'w', newline='') as f:
        writer = _writer(f)
        writer.writerow(DETECTION_FIELDS)
        for path, face in entries:
            try:
                image = imgcore.load_image(path)
            except (OSError, ValueError) as e:
                log.error("cannot read %s: %s", path, e)
                failures += 1
                continue
            rows, cols = image.shape
            box = face if face is not None else FaceBox(0.0, 0.0, float(cols), float(rows))
            start = time.perf_counter()
            try:
                detections = locator.locate_eyes(image, box)
            except (ConfigurationError, imgcore.DimensionError) as e:
                log.error("%s: %s", path, e)
                failures += 1
                continue
            elapsed += time.perf_counter() - start
            for det in detections:
                e = det.ellipse
                writer.writerow([os.path.basename(path), det.eye, _fmt(det.position[0]), _fmt(det.position[1]),
                                 _fmt(e.a if e else None), _fmt(e.b if e else None),
                                 _fmt(e.orientation if e else None), _fmt(det.fit.gof if det.fit else None),
                                 int(det.accepted), _fmt(det.psr)])
                accepted += int(det.accepted)
    done = len(entries) - failures
    if done == 0:
        return EXIT_IO
    log.info("located %d images, %.2f ms per image", done, 1000.0 * elapsed / done)
    return EXIT_OK if accepted else EXIT_NO_DETECTION


def cmd_evaluate(args, config: RunConfig) -> int:
    items = _dataset(args, config)
    if not items:
        return EXIT_NO_WORK
    thresholds = args.thresholds if args.thresholds else config.run.thresholds
    results = benchmark.evaluate(items, config)
    curves = benchmark.accuracy_curves([r.record for r in results], thresholds)
    benchmark.write_item_csv(results, _out_path(args, 'per_item.csv'))
    benchmark.write_summary_csv(curves, _out_path(args, 'summary.csv'))
    print(benchmark.format_table(curves))
    return EXIT_OK


def cmd_sweep(args, config: RunConfig) -> int:
    items = _dataset(args, config)
    if not items:
        return EXIT_NO_WORK
    for scale in args.scales:
        if not 0.0 < scale <= 1.0:
            raise CommandError("scale %r outside (0, 1]" % scale, EXIT_CONFIG)
    rows = benchmark.resolution_sweep(items, args.scales, config)
    benchmark.write_sweep_csv(rows, _out_path(args, 'sweep.csv'))
    for row in rows:
        print('%.2f  %s' % (row.scale, 'invalid' if not row.valid else '%.2f%%' % (100.0 * row.wec)))
    return EXIT_OK


def _write_sequence(args, config: RunConfig):
    base = synth.face_spec(synth.CLEAN, np.random.default_rng(config.stage_seed('synth-sequence')), seed=0)
    trajectory = synth.linear_trajectory(base, args.count, (0.1, 0.0), blinks=args.blinks)
    frames, truths = synth.render_sequence(trajectory)
    entries = []
    for k, (frame, truth) in enumerate(zip(frames, truths)):
        path = _out_path(args, 'frame_%04d.pgm' % k)
        imgcore.save_image(frame, path)
        entries.append(providers.SequenceFrame(k, path, truth.face_box, truth.left.centre, truth.right.centre))
    providers.save_sequence(entries, _out_path(args, 'sequence.csv'))


def cmd_synth(args, config: RunConfig) -> int:
    if args.count < 1:
        return EXIT_NO_WORK
    if args.kind == 'sequence':
        _write_sequence(args, config)
        return EXIT_OK
    if args.kind == 'closure':
        images, labels = synth.closure_corpus(args.count, args.count, config.stage_seed('synth-closure'))
        counts = {1: 0, -1: 0}
        for image, label in zip(images, labels):
            folder = _out_path(args, 'open' if label > 0 else 'closed')
            os.makedirs(folder, exist_ok=True)
            imgcore.save_image(image, os.path.join(folder, 'eye_%04d.pgm' % counts[int(label)]))
            counts[int(label)] += 1
        return EXIT_OK
    items = []
    for item in _synth_items(args.kind, args.count, config):
        path = _out_path(args, item.image_path)
        imgcore.save_image(item.image, path)
        item.image_path = path
        item.image = None
        items.append(item)
    providers.save_custom(items, _out_path(args, 'manifest.csv'))
    return EXIT_OK


def _closure_rois(config: RunConfig, count: int):
    return synth.closure_corpus(count, count, config.stage_seed('closure-corpus'))


def cmd_train_closure(args, config: RunConfig) -> int:
    if args.data is not None:
        try:
            images, labels = providers.load_labelled_dir(args.data)
        except OSError as e:
            raise CommandError(str(e), EXIT_IO)
    else:
        images, labels = _closure_rois(config, args.count)
    if len(images) == 0:
        return EXIT_NO_WORK
    cfg = config.closure
    hog = closure.HogConfig(cell_size=cfg.cell_size)
    features = closure.extract_features(images, hog)
    seed = config.stage_seed('closure')
    try:
        mean, std = closure.cross_validate(features, labels, cfg.folds, cfg.repeats, cfg.c, cfg.epochs, seed)
        model = closure.svm_train(features, labels, cfg.c, cfg.epochs, seed, cfg.cell_size)
    except closure.TrainingError as e:
        raise CommandError(str(e), EXIT_CONFIG)
    modelfile.save_svm(model, _out_path(args, 'closure.model'))
    print('cross-validated accuracy %.2f%% +- %.2f' % (100.0 * mean, 100.0 * std))
    return EXIT_OK


def cmd_calibrate(args, config: RunConfig) -> int:
    try:
        cal = gaze.read_calibration_csv(args.data, args.baseline_angle)
    except (OSError, gaze.CalibrationError) as e:
        raise CommandError(str(e), EXIT_IO)
    kind = args.model or config.gaze.model
    sigma = config.gaze.sigma_k or None
    try:
        if len(cal.grid) != config.gaze.grid ** 2:
            raise gaze.CalibrationError("expected %d calibration points, found %d"
                                        % (config.gaze.grid ** 2, len(cal.grid)))
        left = gaze.fit_model(cal, kind, gaze.LEFT, sigma)
        right = gaze.fit_model(cal, kind, gaze.RIGHT, sigma)
    except (gaze.CalibrationError, gaze.FitError) as e:
        raise CommandError(str(e), EXIT_CONFIG)
    modelfile.save_gaze(left, right, cal.baseline_angle, _out_path(args, 'gaze.model'))
    return EXIT_OK


def cmd_gaze(args, config: RunConfig) -> int:
    try:
        models = modelfile.load_gaze(args.model_file)
        test = gaze.read_calibration_csv(args.data)
    except (OSError, modelfile.ModelFileError, gaze.CalibrationError) as e:
        raise CommandError(str(e), EXIT_IO)
    geom = config.gaze.geometry
    theta = args.angle - models.baseline_angle
    predicted, targets = [], []
    with open(_out_path(args, 'pog.csv'), 'w', newline='') as f:
        writer = _writer(f)
        writer.writerow(['target_x', 'target_y', 'pog_x', 'pog_y', 'monocular'])
        for target, per_target in zip(test.grid, test.samples):
            for left, right in per_target:
                try:
                    pog = gaze.estimate_pog(left, right, models.models, theta, geom)
                except gaze.GazeError:
                    continue
                predicted.append(pog.point)
                targets.append(target)
                writer.writerow([_fmt(target[0]), _fmt(target[1]), _fmt(pog.point[0]), _fmt(pog.point[1]),
                                 int(pog.monocular)])
    if not predicted:
        return EXIT_NO_WORK
    errors = gaze.angular_errors(predicted, targets, geom)
    print('mean absolute error: horizontal %.3f deg, vertical %.3f deg, overall %.3f deg'
          % (errors['horizontal'], errors['vertical'], errors['overall']))
    return EXIT_OK


def _track_row(index: int, eye: session.EyeFrame) -> list:
    det = eye.detection
    kf = eye.kf_position or (None, None)
    corner = eye.corner or (None, None)
    raw_v = eye.ecic_raw or (None, None)
    kf_v = eye.ecic_filtered or (None, None)
    return [index, det.eye, _fmt(det.position[0]), _fmt(det.position[1]), int(det.accepted), _fmt(kf[0]),
            _fmt(kf[1]), eye.state, _fmt(corner[0]), _fmt(corner[1]), _fmt(raw_v[0]), _fmt(raw_v[1]),
            _fmt(kf_v[0]), _fmt(kf_v[1])]


def cmd_track(args, config: RunConfig) -> int:
    try:
        frames = providers.load_sequence(args.data)
        model = modelfile.load_svm(args.closure_model) if args.closure_model else None
    except (OSError, providers.ParseError, modelfile.ModelFileError) as e:
        raise CommandError(str(e), EXIT_IO)
    if not frames:
        return EXIT_NO_WORK
    tracker = session.SequenceTracker(config, model)
    raw, filtered, truth = [], [], []
    with open(_out_path(args, 'track.csv'), 'w', newline='') as f:
        writer = _writer(f)
        writer.writerow(TRACK_FIELDS)
        for frame in frames:
            try:
                image = imgcore.load_image(frame.image_path)
            except (OSError, ValueError) as e:
                raise CommandError("frame %d: %s" % (frame.index, e), EXIT_IO)
            box = frame.face_box or face_box_from_truth(frame.gt_left, frame.gt_right, config.layout)
            result = tracker.step(image, box)
            for eye in result.eyes:
                writer.writerow(_track_row(frame.index, eye))
            if frame.gt_left is not None:
                for eye, gt in zip(result.eyes, (frame.gt_left, frame.gt_right)):
                    if eye.state == OPEN:
                        raw.append(eye.detection.position if eye.detection.accepted else None)
                        filtered.append(eye.kf_position)
                        truth.append(gt)
    if truth:
        print('RMSE per-frame detection %.3f px, Kalman %.3f px'
              % (session.rmse(raw, truth), session.rmse(filtered, truth)))
    return EXIT_OK


COMMANDS = {
    'locate': cmd_locate,
    'evaluate': cmd_evaluate,
    'sweep': cmd_sweep,
    'synth': cmd_synth,
    'train-closure': cmd_train_closure,
    'calibrate': cmd_calibrate,
    'gaze': cmd_gaze,
    'track': cmd_track,
}


def _face(text: str) -> FaceBox:
    values = _floats(text)
    if len(values) != 4:
        raise argparse.ArgumentTypeError("face box needs x,y,w,h")
    return FaceBox(*values)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help="INI or JSON run configuration")
    common.add_argument('--seed', type=int, help="master seed (run.seed)")
    common.add_argument('--out', default='.', help="output directory")
    common.add_argument('-v', '--verbose', action='count', default=0)

    dataset = argparse.ArgumentParser(add_help=False)
    dataset.add_argument('--dataset', choices=('bioid', 'gi4e', 'custom', 'synth'), default='synth')
    dataset.add_argument('--data', help="dataset directory or manifest")
    dataset.add_argument('--kind', choices=(synth.CLEAN, synth.HARD, synth.CLOSED), default=synth.CLEAN)
    dataset.add_argument('--count', type=int, default=200)

    parser = argparse.ArgumentParser(prog='irisloc', description="Iris-centre localization toolkit. "
                                     "Any configuration value can be set with --section.key VALUE.")
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('locate', parents=[common], help="locate iris centres in images")
    p.add_argument('data', help="image, directory of images, or custom manifest CSV")
    p.add_argument('--face', type=_face, help="face box x,y,w,h (default: the whole image, so the eye ROIs are layout "
                   "fractions of the full frame)")

    p = sub.add_parser('evaluate', parents=[common, dataset], help="WEC/AEC/BEC benchmark")
    p.add_argument('--thresholds', type=_floats)

    p = sub.add_parser('sweep', parents=[common, dataset], help="resolution sweep")
    p.add_argument('--scales', type=_floats, default=[1.0, 0.8, 0.6, 0.4, 0.2])

    p = sub.add_parser('synth', parents=[common], help="render synthetic corpora")
    p.add_argument('--kind', choices=synth.KINDS + ('closure', 'sequence'), default=synth.CLEAN)
    p.add_argument('--count', type=int, default=200)
    p.add_argument('--blinks', type=lambda s: [int(v) for v in _floats(s)], default=[])

    p = sub.add_parser('train-closure', parents=[common], help="train the open/closed classifier")
    p.add_argument('--data', help="directory with open/ and closed/ eye crops (default: synthetic)")
    p.add_argument('--count', type=int, default=100, help="synthetic crops per class")

    p = sub.add_parser('calibrate', parents=[common], help="fit gaze mappings from a calibration CSV")
    p.add_argument('--data', required=True)
    p.add_argument('--model', choices=('poly', 'rbf'))
    p.add_argument('--baseline-angle', type=float, default=0.0)

    p = sub.add_parser('gaze', parents=[common], help="apply gaze models to a test CSV")
    p.add_argument('--data', required=True)
    p.add_argument('--model-file', required=True)
    p.add_argument('--angle', type=float, default=0.0, help="current eye-corner angle in radians")

    p = sub.add_parser('track', parents=[common], help="track a frame sequence")
    p.add_argument('--data', required=True, help="sequence manifest CSV")
    p.add_argument('--closure-model')
    return parser


def split_overrides(extra: Sequence[str]) -> Tuple[List[Tuple[str, str]], List[str]]:
    """Pull `--section.key VALUE` / `--section.key=VALUE` pairs out of leftover arguments."""
    overrides, rest = [], []
    i = 0
    while i < len(extra):
        token = extra[i]
        name = token[2:] if token.startswith('--') else ''
        if '.' in name.split('=', 1)[0]:
            if '=' in name:
                key, value = name.split('=', 1)
            elif i + 1 < len(extra):
                key, value = name, extra[i + 1]
                i += 1
            else:
                rest.append(token)
                break
            overrides.append((key, value))
        else:
            rest.append(token)
        i += 1
    return overrides, rest


def load_config(args, overrides: Sequence[Tuple[str, str]]) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    extra = list(overrides)
    if args.seed is not None:
        extra.append(('run.seed', str(args.seed)))
    return config.with_overrides(extra) if extra else config


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    overrides, rest = split_overrides(extra)
    if rest:
        parser.error("unrecognized arguments: %s" % ' '.join(rest))
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')
    try:
        config = load_config(args, overrides)
    except ConfigurationError as e:
        log.error("configuration: %s", e)
        return EXIT_CONFIG
    except OSError as e:
        log.error("cannot read configuration: %s", e)
        return EXIT_IO
    try:
        return COMMANDS[args.command](args, config)
    except CommandError as e:
        log.error("%s", e)
        return e.code
    except ConfigurationError as e:
        log.error("configuration: %s", e)
        return EXIT_CONFIG
    except (OSError, SerializationError) as e:
        log.error("%s", e)
        return EXIT_IO


if __name__ == '__main__':
    sys.exit(main())
