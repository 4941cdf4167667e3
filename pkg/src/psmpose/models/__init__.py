from .adapt import (
    AdaptationError,
    HeadMode,
    adapt_encoder,
    adapt_positional_embeddings,
    backbone_names,
    collapse_input_channels,
    replace_head,
)
from .forest import (
    Forest,
    ForestConfig,
    LinearHyper,
    LinearModel,
    forest_predict,
    linear_predict,
    train_forest,
    train_linear,
)
from .mae import MAEConfig, PretrainHyper, mae_forward, mae_pretrain, random_masking
from .tcn import TcnConfig, TcnHyper, predict_tcn, tcn_forward, train_tcn
from .train import FinetuneHyper, PatientOverlapError, check_disjoint, finetune
from .vit import (
    ViTConfig,
    ViTModel,
    desk_config,
    init_vit_params,
    patchify,
    prepare_images,
    unpatchify,
    vit_forward,
)
