"""Finite-difference check of the three models, and what a broken gradient looks like."""
from aspectcnn.synthetic import tiny_grad_check

for kind in ("vanilla", "pf", "pg"):
    report = tiny_grad_check(kind, seed=0)
    print(f"{kind:<8} max relative error {report.max_error:.2e}  passed={report.passed()}")

# Scaling every analytic gradient by 1.1 must be caught.
bad = tiny_grad_check("pf", seed=0, fault=0.1)
print(f"pf with 10% fault: {bad.max_error:.2e}  passed={bad.passed()}")
