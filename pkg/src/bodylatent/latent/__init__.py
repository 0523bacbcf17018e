from .decoder import Decoder, DecoderError, LatentCode, decode, vjp
from .body import SkinnedBody, build_body
from .affine import AffineDecoder, fit_affine
from .motion import MotionError, MotionStyle, PoseSequence, generate_motion, sample_body
from .dataset import Sample, make_dataset
