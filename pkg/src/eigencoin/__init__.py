"""Eigenspace coin-image classification toolkit."""

__version__ = "0.1.0"

from .imaging import (BinaryMask, Component, GrayImage, PreprocessConfig,
                      StructuringElement, connected_components, dilate,
                      extract_roi, fill_holes, load_image, resize_bilinear,
                      save_image, sobel_magnitude, threshold)
from .eigenspace import (Manifold, build_manifold, load_manifold, mean_image,
                         project, reconstruct, save_manifold, train_mse, truncate)
from .distances import CovModel, amd, bhattacharyya, euclidean, per_vector_diag, shared_spectrum
from .baselines import (BdpcaModel, HarrisConfig, HarrisFeature, WaveletFeature,
                        bdpca_features, bdpca_train, haar_packet, harris_corners,
                        harris_features, wavelet_features)
from .classify import (ClassifierConfig, ClassifierModel, Prediction, fit,
                       load_model, predict, predict_batch, save_model)
from .dataset import (LabeledDataset, SynthClassSpec, SynthConfig, load,
                      load_and_split, load_manifest, load_preset, preset_names,
                      split, synthesize, write_dataset)
from .evaluation import (ConfusionMatrix, EvalReport, SweepRow, alphas_from_counts,
                         confusion, evaluate, overall_accuracy, per_class_rates,
                         sweep, weighted_precision)
from . import errors

__all__ = [name for name in dir() if not name.startswith("_")]
