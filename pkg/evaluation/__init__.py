# W2SC Evaluation
