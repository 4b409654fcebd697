from models.base import (
    ModelSpec, TrainedModel, DEFAULT_HYPERPARAMETERS,
    fit_model, predict_proba, predict, save_model, load_model, adapt_spec_to_rows,
)
