#include <iostream>

int main() {
    std::cout << "jachess CLI placeholder\n";
    return 0;
}
