#include <iostream>

int main() {
    std::cout << "olora: placeholder\n";
    return 0;
}
