from .cv import FoldResult, FoldResults, alpha_grid, cross_validate, make_folds, tune
from .model import DualModel, load_model, predict, predict_from_kernel, save_model
from .survival import SurvivalRecord, censor, fit_survival
from .svm import fit_svc, fit_svr
