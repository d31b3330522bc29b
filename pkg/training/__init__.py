# W2SC Training
