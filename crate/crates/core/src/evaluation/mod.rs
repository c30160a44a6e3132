//! Classification metrics, test-time augmentation, model ensembling and
//! class activation maps.

mod cam;
mod metrics;
mod predict;

pub use cam::{cam_from_grid, compute_cam, fire_colormap, write_cam_overlays, CamVolume, OVERLAY_ALPHA};
pub use metrics::{f1_scores, macro_f1, roc_auc, roc_points_csv, EvalReport, F1Report, RocCurve};
pub use predict::{argmax, ensemble_predict, mean_probabilities, predict_tta, tta_views};
