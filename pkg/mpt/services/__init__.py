# empty package marker
