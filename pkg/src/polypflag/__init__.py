"""polypflag: a polyp-flagging CAD pipeline for CT-like colon volumes.

The pipeline runs in four stages: pre-segmentation of the colon lumen with
an interface-confidence term that neutralizes the tagged-fluid boundary,
polyp-preserving level-set smoothing, adaptive-scale candidate delineation
on the extracted wall surface, and cost-sensitive classification of
geometric plus differential texture features, evaluated by FROC against
ground truth within 3 mm.
"""

from .volume import (CurvaturePair, ScalarVolume, curvature_field, gradient,
                     hessian, iso_curvatures, load_volume, save_volume,
                     shape_index, curvedness)
from .phantom import (GroundTruthPolyp, IntensityModel, PhantomSpec,
                      PolypSpec, generate_phantom, intensity_histogram,
                      load_truth, save_truth, wall_point)
from .segmentation import (ClassDensities, EmptySegmentationError,
                           estimate_class_densities, extract_components,
                           initial_segmentation, interface_confidence,
                           segment, shift_densities)
from .smoothing import (EvolutionParams, VelocityKind, evolve, g_shape,
                        sphere_vanish_iterations, velocity)
from .surface import (TriMesh, geodesic_distances, load_mesh, marching_cubes,
                      save_mesh, vertex_shape_index)
from .candidates import (CandidatePatch, extract_candidates, find_si_minima,
                         grow_patch_levels, histogram_distance, ring_of,
                         select_patch, si_histogram)
from .texture import (candidate_volumes, cooccurrence, haralick,
                      texture_features)
from .learn import (CaseDetections, FrocCurve, LinearModel, Sample, Scaler,
                    fit_scaler, froc, load_model, match_detections,
                    rebalance_cost_sensitive, save_froc, save_model, smote,
                    train_linear)

__version__ = "0.1.0"
