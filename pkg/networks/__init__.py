# W2SC Networks
