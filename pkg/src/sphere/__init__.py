"""vMF mathematics: special functions, the distribution, and the sigma_eff / KL algebra"""
