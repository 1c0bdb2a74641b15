# Reduced-rank LDS identification modules
