# W2SC Losses
