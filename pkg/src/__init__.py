# Heat-Kernel Graph Convolution Package
