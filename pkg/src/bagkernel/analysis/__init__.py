from .cluster import Dendrogram, export_distances, import_distances, kernel_to_distance, ward_cluster
from .stats import auc_bin, auc_roc, spearman, wilcoxon_signed_rank
from .survival import KMCurve, aggregate_pvalues, concordance_index, km_curve, logrank, median_split
