"""Training-free dense-scene instance segmentation from density maps."""
from .core import BBox, Detection, InstanceMask, PixelPoint, iou, normalize_to_gray
from .idm import CandidatePoint, IdmConfig, run_idm
from .pipeline import PipelineConfig, Providers, SegmentationResult, run
from .ppsm import PointPrompt, select_prompts

__version__ = "0.1.0"
