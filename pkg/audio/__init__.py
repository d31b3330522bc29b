# W2SC Audio Front-End
