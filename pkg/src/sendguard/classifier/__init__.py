from .svm import (GRAM_LIMIT, NOT_USER, USER, Scaler, SvmModel, TrainingSet, dual_objective,
                  predict, train_smo)

__all__ = ["GRAM_LIMIT", "NOT_USER", "USER", "Scaler", "SvmModel", "TrainingSet",
           "dual_objective", "predict", "train_smo"]
