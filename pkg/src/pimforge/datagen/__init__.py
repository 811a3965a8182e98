from .cfa import CfaPattern, green_residual, mosaic, mosaic_and_demosaic, violation_fraction
from .dataset import DEFAULT_MIX, LoadedSplit, allocate_counts, generate_sample, load_split, simulate_split
from .pida import foreground_mask, jpeg_simulate, pida_generate, perturb_image
from .rda import horizontal_flip, rda_apply
from .synth import (MANIP_TYPES, PRISTINE, ForgeryError, ForgerySample, blend, boundary_from_mask,
                    pristine_image, procedural_image, synth_forgery)
