"""sphevar: directional variational inference with vMF weight posteriors"""
