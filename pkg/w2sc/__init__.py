# W2SC
