#include "hepi/tensor.hpp"
int main(){return 0;}
