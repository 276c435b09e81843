from .config import ModelConfig, toy_config, full_scale_config
from .params import ParamStore, build_params, GROUPS
from .model import DocModel, VARIANTS
