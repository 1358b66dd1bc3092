fn main() {
    println!("contagion");
}
