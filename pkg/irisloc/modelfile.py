"""Sealed binary model files: magic, serialized record, sha256 of the record."""
import hashlib
import logging
from typing import NamedTuple, Tuple, Union

import numpy as np

from irisloc.closure import N_ORIENTATIONS, SvmModel
from irisloc.gaze import CalibrationModel, PolyModel, RbfModel
from irisloc.serializer import BinaryDeserializer, BinarySerializer, SerializationError

log = logging.getLogger(__name__)

MAGIC = b'IRLM'
DIGEST_SIZE = 32


class ModelFileError(ValueError):
    pass


class ModelRecord:
    pass


class SvmRecord:
    pass


class GazeRecord:
    pass


class EyeModel:
    pass


class PolyRecord:
    pass


class RbfRecord:
    pass


model_schema = dict(
    [
        [
            ModelRecord,
            {
                'kind': 'enum',
                'field': 'enum',
                'values': [
                    ['svm', SvmRecord],
                    ['gaze', GazeRecord],
                ],
            },
        ],
        [
            SvmRecord,
            {
                'kind': 'struct',
                'fields': [
                    ['dimension', 'u32'],
                    ['cellSize', 'u8'],
                    ['orientations', 'u8'],
                    ['c', 'f64'],
                    ['bias', 'f64'],
                    ['weights', ['f64']],
                ],
            },
        ],
        [
            GazeRecord,
            {
                'kind': 'struct',
                'fields': [
                    ['left', EyeModel],
                    ['right', EyeModel],
                    ['baselineAngle', 'f64'],
                ],
            },
        ],
        [
            EyeModel,
            {
                'kind': 'enum',
                'field': 'enum',
                'values': [
                    ['poly', PolyRecord],
                    ['rbf', RbfRecord],
                ],
            },
        ],
        [
            PolyRecord,
            {
                'kind': 'struct',
                'fields': [
                    ['a', ['f64']],
                    ['b', ['f64']],
                ],
            },
        ],
        [
            RbfRecord,
            {
                'kind': 'struct',
                'fields': [
                    ['sigmaK', 'f64'],
                    ['landmarks', ['f64']],
                    ['wx', ['f64']],
                    ['wy', ['f64']],
                ],
            },
        ],
    ]
)


class GazeModels(NamedTuple):
    left: CalibrationModel
    right: CalibrationModel
    baseline_angle: float

    @property
    def models(self) -> Tuple[CalibrationModel, CalibrationModel]:
        return self.left, self.right


def create_svm_record(m: SvmModel) -> ModelRecord:
    svm = SvmRecord()
    svm.dimension = m.dimension
    svm.cellSize = m.cell_size
    svm.orientations = N_ORIENTATIONS
    svm.c = m.c
    svm.bias = m.b
    svm.weights = [float(v) for v in m.w]
    record = ModelRecord()
    record.enum = 'svm'
    record.svm = svm
    return record


def create_eye_model(m: CalibrationModel) -> EyeModel:
    eye = EyeModel()
    if isinstance(m, PolyModel):
        poly = PolyRecord()
        poly.a = list(m.a)
        poly.b = list(m.b)
        eye.enum = 'poly'
        eye.poly = poly
    elif isinstance(m, RbfModel):
        rbf = RbfRecord()
        rbf.sigmaK = m.sigma_k
        rbf.landmarks = [float(v) for v in np.asarray(m.landmarks).ravel()]
        rbf.wx = [float(v) for v in m.wx]
        rbf.wy = [float(v) for v in m.wy]
        eye.enum = 'rbf'
        eye.rbf = rbf
    else:
        raise ModelFileError("cannot store %s" % type(m).__name__)
    return eye


def create_gaze_record(left: CalibrationModel, right: CalibrationModel, baseline_angle: float) -> ModelRecord:
    gaze = GazeRecord()
    gaze.left = create_eye_model(left)
    gaze.right = create_eye_model(right)
    gaze.baselineAngle = float(baseline_angle)
    record = ModelRecord()
    record.enum = 'gaze'
    record.gaze = gaze
    return record


def seal(record: ModelRecord) -> bytes:
    try:
        payload = BinarySerializer(model_schema).serialize(record)
    except SerializationError as e:
        raise ModelFileError(str(e))
    return MAGIC + payload + hashlib.sha256(payload).digest()


def unseal(data: bytes) -> ModelRecord:
    if len(data) < len(MAGIC) + DIGEST_SIZE or data[:len(MAGIC)] != MAGIC:
        raise ModelFileError("not a model file")
    payload, digest = data[len(MAGIC):-DIGEST_SIZE], data[-DIGEST_SIZE:]
    if hashlib.sha256(payload).digest() != digest:
        raise ModelFileError("model file digest mismatch")
    try:
        return BinaryDeserializer(model_schema, payload).deserialize(ModelRecord)
    except SerializationError as e:
        raise ModelFileError(str(e))


def _to_svm(svm: SvmRecord) -> SvmModel:
    if svm.dimension != len(svm.weights):
        raise ModelFileError("SVM record holds %d weights for dimension %d" % (len(svm.weights), svm.dimension))
    if svm.orientations != N_ORIENTATIONS:
        raise ModelFileError("SVM was trained with %d orientations" % svm.orientations)
    return SvmModel(w=np.array(svm.weights), b=svm.bias, c=svm.c, cell_size=svm.cellSize)


def _to_calibration_model(eye: EyeModel) -> CalibrationModel:
    if eye.enum == 'poly':
        return PolyModel(a=tuple(eye.poly.a), b=tuple(eye.poly.b))
    rbf = eye.rbf
    return RbfModel(landmarks=np.array(rbf.landmarks).reshape(-1, 2), sigma_k=rbf.sigmaK, wx=np.array(rbf.wx),
                    wy=np.array(rbf.wy))


def decode(data: bytes) -> Union[SvmModel, GazeModels]:
    record = unseal(data)
    if record.enum == 'svm':
        return _to_svm(record.svm)
    gaze = record.gaze
    return GazeModels(_to_calibration_model(gaze.left), _to_calibration_model(gaze.right), gaze.baselineAngle)


def load_model(path) -> Union[SvmModel, GazeModels]:
    with open(path, 'rb') as f:
        return decode(f.read())


def _write(path, data: bytes):
    with open(path, 'wb') as f:
        f.write(data)
    log.info("wrote %d byte model file %s", len(data), path)


def save_svm(m: SvmModel, path):
    _write(path, seal(create_svm_record(m)))


def save_gaze(left: CalibrationModel, right: CalibrationModel, baseline_angle: float, path):
    _write(path, seal(create_gaze_record(left, right, baseline_angle)))


def load_svm(path) -> SvmModel:
    m = load_model(path)
    if not isinstance(m, SvmModel):
        raise ModelFileError("%s holds a gaze model" % path)
    return m


def load_gaze(path) -> GazeModels:
    m = load_model(path)
    if not isinstance(m, GazeModels):
        raise ModelFileError("%s holds a closure model" % path)
    return m
