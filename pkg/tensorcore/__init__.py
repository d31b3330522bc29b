# W2SC Tensor Core
