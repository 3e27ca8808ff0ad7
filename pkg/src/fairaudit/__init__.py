"""fairaudit: subgroup fairness auditing and bias mitigation for multiclass
speech classifiers, at desk scale."""

__version__ = "0.1.0"
